/* tslint:disable */
/* eslint-disable */

/**
 * One random dual-head attention evaluation.
 */
export class Decomposition {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Attention map, tokens × tokens.
     */
    attention(): Float64Array;
    /**
     * `O_S O_Iᵀ`, tokens × tokens.
     */
    cross(): Float64Array;
    /**
     * `O_I`, tokens × dim.
     */
    invariant(): Float64Array;
    /**
     * Draws parameters and `tokens` Gaussian tokens of width `dim` from `seed`.
     */
    constructor(seed: bigint, tokens: number, dim: number);
    /**
     * `O_S`, tokens × dim.
     */
    specific(): Float64Array;
    /**
     * `‖O_S + O_I − A V W‖_max`.
     */
    readonly completeness: number;
    readonly dim: number;
    /**
     * `‖O_S O_Iᵀ‖_max`.
     */
    readonly residual: number;
    readonly tokens: number;
}

/**
 * The built-in AU hypergraph and its propagation operator.
 */
export class KnowledgeGraph {
    free(): void;
    [Symbol.dispose](): void;
    edge_names(): string[];
    /**
     * Incidence matrix, vertices × edges.
     */
    incidence(): Float64Array;
    /**
     * Vertices of hyperedge `edge`.
     */
    members(edge: number): Uint32Array;
    constructor();
    /**
     * Per-vertex response of `steps` identity-weight convolutions to a
     * unit signal on the vertices listed in `active`.
     */
    propagate(active: Uint32Array, steps: number): Float64Array;
    /**
     * Propagation matrix, vertices × vertices.
     */
    propagation(): Float64Array;
    vertex_names(): string[];
}

/**
 * Learning rate at every step of a one-cycle run.
 */
export function lr_curve(total_steps: number, peak: number, warmup_fraction: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_decomposition_free: (a: number, b: number) => void;
    readonly __wbg_knowledgegraph_free: (a: number, b: number) => void;
    readonly decomposition_attention: (a: number) => [number, number];
    readonly decomposition_completeness: (a: number) => number;
    readonly decomposition_cross: (a: number) => [number, number];
    readonly decomposition_dim: (a: number) => number;
    readonly decomposition_invariant: (a: number) => [number, number];
    readonly decomposition_new: (a: bigint, b: number, c: number) => [number, number, number];
    readonly decomposition_residual: (a: number) => number;
    readonly decomposition_specific: (a: number) => [number, number];
    readonly decomposition_tokens: (a: number) => number;
    readonly knowledgegraph_edge_names: (a: number) => [number, number];
    readonly knowledgegraph_incidence: (a: number) => [number, number];
    readonly knowledgegraph_members: (a: number, b: number) => [number, number];
    readonly knowledgegraph_new: () => number;
    readonly knowledgegraph_propagate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly knowledgegraph_propagation: (a: number) => [number, number];
    readonly knowledgegraph_vertex_names: (a: number) => [number, number];
    readonly lr_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
