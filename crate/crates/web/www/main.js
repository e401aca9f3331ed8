import init, { HeadDemo, composite, fuse } from "./pkg/gausstalk_web.js";

await init();
const demo = new HeadDemo(0n, 64, 2000, 200);
const names = HeadDemo.au_names();
const aus = new Float64Array(names.length);
const status = document.getElementById("status");
status.textContent = "";

// head
const head = document.getElementById("head");
const ctx = head.getContext("2d");
const small = new OffscreenCanvas(demo.size(), demo.size());
const sctx = small.getContext("2d");
const sliders = document.getElementById("sliders");
const inputs = names.map((name, i) => {
  const label = document.createElement("span");
  label.textContent = name;
  const input = document.createElement("input");
  Object.assign(input, { type: "range", min: 0, max: 5, step: 0.05, value: 0 });
  const val = document.createElement("span");
  val.textContent = "0.00";
  input.addEventListener("input", () => {
    aus[i] = Number(input.value);
    val.textContent = aus[i].toFixed(2);
    drawHead();
  });
  sliders.append(label, input, val);
  return [input, val];
});

function drawHead() {
  const t0 = performance.now();
  const faceComplement = document.getElementById("blend").value === "face-complement";
  const layer = Number(document.getElementById("layer").value);
  const px = demo.render(aus, faceComplement, layer);
  const n = demo.size();
  sctx.putImageData(new ImageData(new Uint8ClampedArray(px), n, n), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(small, 0, 0, head.width, head.height);
  if (document.getElementById("marks").checked) {
    const lm = demo.landmarks(aus);
    const s = head.width / n;
    ctx.fillStyle = "#0f0";
    for (let k = 0; k < lm.length; k += 2) {
      ctx.fillRect(lm[k] * s - 2, lm[k + 1] * s - 2, 4, 4);
    }
  }
  const rec = demo.recover(aus);
  document.getElementById("recovered").textContent = names
    .map((nm, i) => (rec[i] > 0.005 ? `${nm} ${rec[i].toFixed(2)}` : null))
    .filter(Boolean)
    .join(", ") || "neutral";
  status.textContent = `rendered in ${(performance.now() - t0).toFixed(0)} ms`;
}

for (const id of ["blend", "layer", "marks"]) {
  document.getElementById(id).addEventListener("change", drawHead);
}
document.getElementById("reset").addEventListener("click", () => {
  aus.fill(0);
  for (const [input, val] of inputs) {
    input.value = 0;
    val.textContent = "0.00";
  }
  drawHead();
});
drawHead();

// compositing
const stack = document.getElementById("stack");
const prims = [];
function addPrim(color, alpha) {
  const row = document.createElement("div");
  const c = document.createElement("input");
  Object.assign(c, { type: "color", value: color });
  const a = document.createElement("input");
  Object.assign(a, { type: "range", min: 0, max: 1, step: 0.01, value: alpha });
  const del = document.createElement("button");
  del.textContent = "remove";
  const p = { c, a, row };
  del.addEventListener("click", () => {
    prims.splice(prims.indexOf(p), 1);
    row.remove();
    drawComposite();
  });
  c.addEventListener("input", drawComposite);
  a.addEventListener("input", drawComposite);
  row.append(`#${prims.length + 1} `, c, " opacity ", a, " ", del);
  stack.append(row);
  prims.push(p);
}

function hexToRgb(h) {
  return [1, 3, 5].map((i) => parseInt(h.slice(i, i + 2), 16) / 255);
}

function drawComposite() {
  const colors = new Float64Array(prims.flatMap((p) => hexToRgb(p.c.value)));
  const alphas = new Float64Array(prims.map((p) => Number(p.a.value)));
  const out = composite(colors, alphas);
  const [r, g, b, A] = out;
  const un = (v) => Math.round((A > 0 ? v / A : 0) * 255);
  document.getElementById("swatch").style.backgroundColor = `rgba(${un(r)}, ${un(g)}, ${un(b)}, ${A})`;
  const weights = Array.from(out.slice(4)).map((w, i) => `  #${i + 1}: a*T = ${w.toFixed(4)}`);
  document.getElementById("composite").textContent =
    `C = (${r.toFixed(4)}, ${g.toFixed(4)}, ${b.toFixed(4)})\nA = ${A.toFixed(6)}\n` + weights.join("\n");
}
document.getElementById("add").addEventListener("click", () => {
  addPrim("#3366cc", 0.5);
  drawComposite();
});
addPrim("#cc3333", 0.5);
addPrim("#33cc33", 0.5);
drawComposite();

// fusion
const D = 16;
const ci = Float64Array.from({ length: D }, (_, k) => Math.sin(1.3 * k + 0.4) * 0.9);
const ce = Float64Array.from({ length: D }, (_, k) => Math.cos(0.7 * k) * 0.8 - 0.1);
const fcanvas = document.getElementById("fusion");
const fctx = fcanvas.getContext("2d");

function drawFusion() {
  const a = Number(document.getElementById("alpha").value);
  document.getElementById("alphaval").textContent = a.toFixed(2);
  const ramp = document.getElementById("perchannel").checked;
  const alpha = Float64Array.from({ length: D }, (_, k) => (ramp ? (a * k) / (D - 1) : a));
  const cf = fuse(alpha, ci, ce);
  const { width: W, height: H } = fcanvas;
  fctx.clearRect(0, 0, W, H);
  fctx.strokeStyle = "#aaa";
  fctx.beginPath();
  fctx.moveTo(0, H / 2);
  fctx.lineTo(W, H / 2);
  fctx.stroke();
  const slot = W / D;
  const bar = slot / 4;
  const y = (v) => H / 2 - v * (H / 2.2);
  [[ci, "#4a7fd0"], [ce, "#d07a4a"], [cf, "#333"]].forEach(([v, color], j) => {
    fctx.fillStyle = color;
    for (let k = 0; k < D; k++) {
      const x = k * slot + bar * (j + 0.5);
      fctx.fillRect(x, Math.min(y(v[k]), H / 2), bar - 1, Math.abs(y(v[k]) - H / 2));
    }
  });
}
document.getElementById("alpha").addEventListener("input", drawFusion);
document.getElementById("perchannel").addEventListener("change", drawFusion);
drawFusion();
