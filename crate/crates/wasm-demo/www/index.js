import init, { flops_curve, image_size, input_pixels, render_mask, solve_plan } from "./pkg/mtr_wasm_demo.js";

const $ = (id) => document.getElementById(id);

function paint(canvas, rgba) {
  const side = image_size();
  const data = new ImageData(new Uint8ClampedArray(rgba), side, side);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function updateMask() {
  const target = Number($("m-target").value);
  $("m-target-v").textContent = `${Math.round(target * 100)}%`;
  const imageSeed = Number($("m-image").value) >>> 0;
  paint($("m-input"), input_pixels(imageSeed));
  try {
    const view = render_mask(
      Number($("m-model").value) >>> 0,
      imageSeed,
      target,
      "2,4,6",
      $("m-strategy").value,
      $("m-indicator").value,
      Number($("m-layer").value),
    );
    paint($("m-output"), view.pixels);
    const s = JSON.parse(view.summary);
    $("m-summary").className = "";
    $("m-summary").textContent =
      `k = ${s.plan.k.toFixed(4)}, achieved ${(s.achieved * 100).toFixed(2)}%\n` +
      `tokens in:  ${s.tokens_in.join(" ")}\ntokens out: ${s.tokens_out.join(" ")}`;
  } catch (e) {
    $("m-summary").className = "err";
    $("m-summary").textContent = String(e.message ?? e);
  }
}

function updateCurve() {
  const canvas = $("c-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  let points;
  try {
    points = JSON.parse(flops_curve($("c-layers").value, 200));
    $("c-error").textContent = "";
  } catch (e) {
    $("c-error").textContent = String(e.message ?? e);
    return;
  }
  const pad = 40;
  const x = (k) => pad + (k / 0.5) * (w - 2 * pad);
  const y = (r) => h - pad - r * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.fillText("k", w - pad + 8, h - pad + 4);
  ctx.fillText("reduction", 4, pad - 8);
  for (const t of [0, 0.25, 0.5, 0.75, 1]) ctx.fillText(t.toFixed(2), 4, y(t) + 4);
  for (const k of [0, 0.1, 0.2, 0.3, 0.4, 0.5]) ctx.fillText(k.toFixed(1), x(k) - 8, h - pad + 16);
  ctx.strokeStyle = "#c00";
  ctx.beginPath();
  points.forEach((p, i) => (i ? ctx.lineTo(x(p.k), y(p.achieved)) : ctx.moveTo(x(p.k), y(p.achieved))));
  ctx.stroke();
}

function updateSolver() {
  try {
    const plan = JSON.parse(solve_plan(Number($("s-target").value), $("s-layers").value, $("s-strategy").value));
    $("s-out").className = "";
    $("s-out").textContent = JSON.stringify(plan, null, 2);
  } catch (e) {
    $("s-out").className = "err";
    $("s-out").textContent = String(e.message ?? e);
  }
}

await init();
for (const id of ["m-target", "m-layer", "m-strategy", "m-indicator", "m-image", "m-model"]) {
  $(id).addEventListener("input", updateMask);
}
$("c-layers").addEventListener("input", updateCurve);
for (const id of ["s-target", "s-layers", "s-strategy"]) $(id).addEventListener("input", updateSolver);
updateMask();
updateCurve();
updateSolver();
