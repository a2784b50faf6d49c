/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_decomposition_free: (a: number, b: number) => void;
export const __wbg_knowledgegraph_free: (a: number, b: number) => void;
export const decomposition_attention: (a: number) => [number, number];
export const decomposition_completeness: (a: number) => number;
export const decomposition_cross: (a: number) => [number, number];
export const decomposition_dim: (a: number) => number;
export const decomposition_invariant: (a: number) => [number, number];
export const decomposition_new: (a: bigint, b: number, c: number) => [number, number, number];
export const decomposition_residual: (a: number) => number;
export const decomposition_specific: (a: number) => [number, number];
export const decomposition_tokens: (a: number) => number;
export const knowledgegraph_edge_names: (a: number) => [number, number];
export const knowledgegraph_incidence: (a: number) => [number, number];
export const knowledgegraph_members: (a: number, b: number) => [number, number];
export const knowledgegraph_new: () => number;
export const knowledgegraph_propagate: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const knowledgegraph_propagation: (a: number) => [number, number];
export const knowledgegraph_vertex_names: (a: number) => [number, number];
export const lr_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
