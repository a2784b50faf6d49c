import init, { Decomposition, KnowledgeGraph, lr_curve } from "./pkg/nfer_demo.js";

const $ = (id) => document.getElementById(id);

// diverging blue-white-red map on [-scale, scale]
function color(v, scale) {
  const t = scale > 0 ? Math.max(-1, Math.min(1, v / scale)) : 0;
  const a = Math.round(255 * (1 - Math.abs(t)));
  return t >= 0 ? `rgb(255,${a},${a})` : `rgb(${a},${a},255)`;
}

function heatmap(canvas, data, rows, cols, scale) {
  const cell = Math.max(2, Math.floor(240 / Math.max(rows, cols)));
  canvas.width = cols * cell;
  canvas.height = rows * cell;
  const ctx = canvas.getContext("2d");
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      ctx.fillStyle = color(data[r * cols + c], scale);
      ctx.fillRect(c * cell, r * cell, cell, cell);
    }
  }
}

const maxAbs = (xs) => xs.reduce((m, x) => Math.max(m, Math.abs(x)), 0);

function drawDecomposition() {
  try {
    const d = new Decomposition(BigInt($("seed").value), Number($("tokens").value), Number($("dim").value));
    const s = d.specific(), i = d.invariant();
    const scale = Math.max(maxAbs(s), maxAbs(i));
    heatmap($("specific"), s, d.tokens, d.dim, scale);
    heatmap($("invariant"), i, d.tokens, d.dim, scale);
    heatmap($("attention"), d.attention(), d.tokens, d.tokens, 1);
    heatmap($("cross"), d.cross(), d.tokens, d.tokens, scale);
    $("residual").textContent =
      `max |O_S O_Iᵀ| = ${d.residual.toExponential(2)}, max |O_S + O_I − A V W| = ${d.completeness.toExponential(2)}`;
    d.free();
  } catch (e) {
    $("residual").textContent = `error: ${e.message ?? e}`;
  }
}

function drawSchedule() {
  const canvas = $("lr");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let curve;
  try {
    curve = lr_curve(Number($("steps").value), Number($("peak").value), Number($("warmup").value));
  } catch (e) {
    $("lrinfo").textContent = `error: ${e.message ?? e}`;
    return;
  }
  const peak = Math.max(...curve);
  const pad = 20;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.strokeStyle = "#c33";
  ctx.beginPath();
  curve.forEach((v, k) => {
    const x = pad + (k / Math.max(1, curve.length - 1)) * (canvas.width - 2 * pad);
    const y = canvas.height - pad - (v / peak) * (canvas.height - 2 * pad);
    k === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  $("lrinfo").textContent =
    `first ${curve[0].toExponential(3)}, peak ${peak.toExponential(3)}, last ${curve[curve.length - 1].toExponential(3)}`;
}

function setupGraph() {
  const graph = new KnowledgeGraph();
  const vertices = graph.vertex_names();
  const edges = graph.edge_names();
  const active = new Set();

  const render = () => {
    for (const [k, el] of [...$("vertices").children].entries()) {
      el.style.background = active.has(k) ? "#fc8" : "";
    }
    const hops = Number($("hops").value);
    $("hopcount").textContent = hops;
    const response = graph.propagate(Uint32Array.from([...active]), hops);
    const canvas = $("response");
    const ctx = canvas.getContext("2d");
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const top = Math.max(1e-12, ...response);
    const w = canvas.width / vertices.length;
    vertices.forEach((name, k) => {
      const h = (response[k] / top) * (canvas.height - 30);
      ctx.fillStyle = active.has(k) ? "#e83" : "#69c";
      ctx.fillRect(k * w + 4, canvas.height - 18 - h, w - 8, h);
      ctx.fillStyle = "#222";
      ctx.fillText(name, k * w + 4, canvas.height - 4);
    });
  };

  edges.forEach((name, e) => {
    const b = document.createElement("button");
    b.textContent = name;
    b.onclick = () => {
      active.clear();
      graph.members(e).forEach((v) => active.add(v));
      render();
    };
    $("edges").appendChild(b);
  });
  vertices.forEach((name, k) => {
    const s = document.createElement("span");
    s.className = "au";
    s.textContent = name;
    s.onclick = () => {
      active.has(k) ? active.delete(k) : active.add(k);
      render();
    };
    $("vertices").appendChild(s);
  });
  $("hops").oninput = render;
  render();
}

await init();
$("status").textContent = "Ready.";
$("draw").onclick = drawDecomposition;
$("plot").onclick = drawSchedule;
drawDecomposition();
drawSchedule();
setupGraph();
