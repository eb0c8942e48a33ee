import init, { sigma_curve, PaintSession, ToySession } from "./pkg/losspaint_web.js";

const SIDE = 16;
const RES = 32;
const PAINT_EPOCHS = 150;
const TOY_EPOCHS = 60;

function plotLines(canvas, series, colors) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.map((p) => p[0]));
  const ys = series.flatMap((s) => s.map((p) => p[1]));
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const sx = (x) => 10 + ((x - x0) / (x1 - x0 || 1)) * (w - 20);
  const sy = (y) => h - 10 - ((y - y0) / (y1 - y0 || 1)) * (h - 20);
  series.forEach((s, i) => {
    ctx.strokeStyle = colors[i];
    ctx.lineWidth = 2;
    ctx.beginPath();
    s.forEach(([x, y], j) => (j ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
    ctx.stroke();
  });
}

// Row 0 of a grid is drawn at the top of the canvas.
function drawGrid(canvas, values, side) {
  const ctx = canvas.getContext("2d");
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const cell = canvas.width / side;
  for (let j = 0; j < side; j++) {
    for (let i = 0; i < side; i++) {
      const v = hi > lo ? (values[j * side + i] - lo) / (hi - lo) : 0;
      const g = Math.round(255 * v);
      ctx.fillStyle = `rgb(${g},${g},${g})`;
      ctx.fillRect(i * cell, j * cell, cell, cell);
    }
  }
}

function setupSigma() {
  const family = document.getElementById("sigma-family");
  const mean = document.getElementById("sigma-mean");
  const label = document.getElementById("sigma-mean-value");
  const canvas = document.getElementById("sigma-plot");
  const redraw = () => {
    label.textContent = Number(mean.value).toFixed(2);
    const flat = sigma_curve(family.value, Number(mean.value), 200);
    const pts = [];
    for (let k = 0; k < flat.length; k += 2) pts.push([flat[k], flat[k + 1]]);
    plotLines(canvas, [pts], ["#2060c0"]);
  };
  family.addEventListener("change", redraw);
  mean.addEventListener("input", redraw);
  redraw();
}

function setupPaint() {
  const draw = document.getElementById("paint-draw");
  const surface = document.getElementById("paint-surface");
  const status = document.getElementById("paint-status");
  const cells = new Float64Array(SIDE * SIDE);
  let session = null;
  let running = false;
  let ink = 1;

  // A starting drawing: a ring.
  for (let j = 0; j < SIDE; j++) {
    for (let i = 0; i < SIDE; i++) {
      const r = Math.hypot(i - 7.5, j - 7.5);
      cells[j * SIDE + i] = r > 4 && r < 6.5 ? 1 : 0;
    }
  }
  const show = () => drawGrid(draw, cells, SIDE);
  show();

  const cellAt = (ev) => {
    const rect = draw.getBoundingClientRect();
    const i = Math.floor(((ev.clientX - rect.left) / rect.width) * SIDE);
    const j = Math.floor(((ev.clientY - rect.top) / rect.height) * SIDE);
    return i >= 0 && i < SIDE && j >= 0 && j < SIDE ? j * SIDE + i : -1;
  };
  let down = false;
  draw.addEventListener("pointerdown", (ev) => {
    const k = cellAt(ev);
    if (k < 0) return;
    down = true;
    ink = cells[k] > 0.5 ? 0 : 1;
    cells[k] = ink;
    show();
  });
  draw.addEventListener("pointermove", (ev) => {
    const k = cellAt(ev);
    if (!down || k < 0) return;
    cells[k] = ink;
    show();
  });
  window.addEventListener("pointerup", () => (down = false));

  const step = () => {
    if (!running) return;
    const objective = session.train(2);
    const epochs = session.epochs();
    drawGrid(surface, session.surface(RES), RES);
    status.textContent = `epoch ${epochs}  objective ${objective.toExponential(3)}  aligned mse ${session
      .aligned_mse(RES)
      .toExponential(3)}`;
    if (epochs >= PAINT_EPOCHS) running = false;
    else requestAnimationFrame(step);
  };
  document.getElementById("paint-train").addEventListener("click", () => {
    if (session) session.free();
    session = new PaintSession(cells, SIDE, 0);
    running = true;
    requestAnimationFrame(step);
  });
  document.getElementById("paint-stop").addEventListener("click", () => (running = false));
  document.getElementById("paint-clear").addEventListener("click", () => {
    cells.fill(0);
    show();
  });
}

function setupToy() {
  const canvas = document.getElementById("toy-plot");
  const status = document.getElementById("toy-status");
  const n = 101;
  let session = null;
  const render = () => {
    const curve = session.curve(n);
    const target = session.target(n);
    const xs = Array.from({ length: n }, (_, i) => i / (n - 1));
    plotLines(
      canvas,
      [xs.map((x, i) => [x, target[i]]), xs.map((x, i) => [x, curve[i]])],
      ["#aaa", "#c03020"],
    );
  };
  const step = () => {
    const objective = session.train(1);
    render();
    status.textContent = `epoch ${session.epochs()}  objective ${objective.toExponential(3)}  (grey: target, red: loss)`;
    if (session.epochs() < TOY_EPOCHS) requestAnimationFrame(step);
  };
  document.getElementById("toy-train").addEventListener("click", () => {
    if (session) session.free();
    session = new ToySession(0);
    render();
    requestAnimationFrame(step);
  });
}

await init();
setupSigma();
setupPaint();
setupToy();
