import init, { gradientCurve, sphereTrajectory, batchComparison } from "./pkg/radopt_wasm.js";

const METHODS = ["rsgd", "radagrad", "rrmsprop", "radam", "ramsgrad"];
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function legend(el, names) {
  el.innerHTML = names.map((n, i) => `<span><i style="background:${COLORS[i % COLORS.length]}"></i>${n}</span>`).join("");
}

// Log-scale line plot; series may have different lengths.
function plotLog(canvas, series) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 50;
  ctx.clearRect(0, 0, w, h);
  const finite = series.flat().filter((v) => v > 0 && Number.isFinite(v));
  if (finite.length === 0) return;
  const lo = Math.floor(Math.log10(Math.min(...finite)));
  const hi = Math.ceil(Math.log10(Math.max(...finite)));
  const span = Math.max(hi - lo, 1);
  const n = Math.max(...series.map((s) => s.length));
  const x = (i) => pad + (i / Math.max(n - 1, 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((Math.log10(v) - lo) / span) * (h - 2 * pad);

  ctx.strokeStyle = "#eee";
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  for (let e = lo; e <= hi; e++) {
    ctx.beginPath();
    ctx.moveTo(pad, y(10 ** e));
    ctx.lineTo(w - pad, y(10 ** e));
    ctx.stroke();
    ctx.fillText(`1e${e}`, 8, y(10 ** e) + 4);
  }
  ctx.fillText("1", pad, h - pad + 16);
  ctx.fillText(String(n), w - pad - 20, h - pad + 16);

  series.forEach((s, j) => {
    ctx.strokeStyle = COLORS[j % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let pen = false;
    s.forEach((v, i) => {
      if (!(v > 0 && Number.isFinite(v))) { pen = false; return; }
      pen ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v));
      pen = true;
    });
    ctx.stroke();
  });
}

function drawSphere(canvas, data) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, r = w / 2 - 20, c = w / 2;
  ctx.clearRect(0, 0, w, w);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.arc(c, c, r, 0, 2 * Math.PI);
  ctx.stroke();

  // Orthographic view along z; points with z < 0 sit on the far side.
  const px = (p) => [c + r * p[0], c - r * p[1]];
  const target = data.slice(0, 3);
  const pts = [];
  for (let i = 3; i < data.length; i += 3) pts.push([data[i], data[i + 1], data[i + 2]]);

  for (let i = 1; i < pts.length; i++) {
    const [a, b] = [px(pts[i - 1]), px(pts[i])];
    ctx.strokeStyle = pts[i][2] >= 0 ? "rgba(31,119,180,0.9)" : "rgba(31,119,180,0.25)";
    ctx.beginPath();
    ctx.moveTo(...a);
    ctx.lineTo(...b);
    ctx.stroke();
  }
  const dot = (p, color) => {
    const [u, v] = px(p);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(u, v, 4, 0, 2 * Math.PI);
    ctx.fill();
  };
  dot(pts[0], "#2ca02c");
  dot(pts[pts.length - 1], "#d62728");
  for (const s of [1, -1]) {
    const t = target.map((v) => s * v);
    const [u, v] = px(t);
    ctx.strokeStyle = t[2] >= 0 ? "#000" : "#bbb";
    ctx.beginPath();
    ctx.moveTo(u - 6, v - 6); ctx.lineTo(u + 6, v + 6);
    ctx.moveTo(u + 6, v - 6); ctx.lineTo(u - 6, v + 6);
    ctx.stroke();
  }
}

function guarded(fn) {
  return () => {
    try {
      $("status").textContent = "";
      fn();
    } catch (e) {
      $("status").textContent = String(e.message ?? e);
    }
  };
}

function runCurves() {
  const chosen = METHODS.filter((m) => $(`m-${m}`).checked);
  const series = chosen.map((m) =>
    Array.from(gradientCurve(m, num("c-alpha"), num("c-batch"), num("c-iters"), num("c-seed"))));
  plotLog($("c-plot"), series);
  legend($("c-legend"), chosen);
}

function runSphere() {
  drawSphere($("s-plot"), sphereTrajectory($("s-method").value, num("s-alpha"), num("s-iters"), num("s-seed")));
}

function runBatches() {
  const k = num("b-iters");
  const v = Array.from(batchComparison(num("b-b0"), num("b-delta"), num("b-period"), num("b-alpha"), k, 0));
  plotLog($("b-plot"), [v.slice(0, k), v.slice(k)]);
  legend($("b-legend"), [`constant b = ${num("b-b0")}`, `growing, δ = ${num("b-delta")}`]);
}

await init();
$("methods").innerHTML = METHODS.map((m) =>
  `<label><input type="checkbox" id="m-${m}" ${m === "rsgd" || m === "ramsgrad" ? "checked" : ""}> ${m}</label>`).join("");
$("s-method").innerHTML = METHODS.map((m) => `<option ${m === "rsgd" ? "selected" : ""}>${m}</option>`).join("");
$("c-run").onclick = guarded(runCurves);
$("s-run").onclick = guarded(runSphere);
$("b-run").onclick = guarded(runBatches);
$("status").textContent = "";
guarded(runCurves)();
guarded(runSphere)();
