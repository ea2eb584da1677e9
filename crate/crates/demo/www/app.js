import init, { codec_explorer, channel_sensitivity, shuffle_trace } from "./pkg/featcache_demo.js";

const $ = (id) => document.getElementById(id);

function grey(v) {
  const c = Math.max(0, Math.min(255, Math.round(v * 255)));
  return [c, c, c];
}

function heat(v) {
  const t = Math.max(0, Math.min(1, v));
  return [Math.round(255 * t), Math.round(80 * (1 - t)), Math.round(255 * (1 - t))];
}

// Draws a side×side map scaled to the canvas region at (x0, y0, w, h).
function drawMap(ctx, data, side, color, x0 = 0, y0 = 0, w = ctx.canvas.width, h = ctx.canvas.height) {
  const img = ctx.createImageData(side, side);
  for (let i = 0; i < side * side; i++) {
    const [r, g, b] = color(data[i]);
    img.data.set([r, g, b, 255], i * 4);
  }
  const tmp = new OffscreenCanvas(side, side);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, x0, y0, w, h);
}

function runCodec() {
  const tau = Math.pow(10, parseFloat($("tau").value));
  const smooth = parseFloat($("smooth").value);
  const seed = parseInt($("codec-seed").value, 10) >>> 0;
  $("tau-val").textContent = tau.toExponential(1);
  $("smooth-val").textContent = smooth.toFixed(2);

  const view = codec_explorer(tau, smooth, seed);
  const side = view.side();
  const orig = view.original();
  const dec = view.decoded();
  let lo = Infinity, hi = -Infinity;
  for (const v of orig) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const span = hi - lo || 1;
  drawMap($("orig").getContext("2d"), orig.map((v) => (v - lo) / span), side, grey);
  drawMap($("err").getContext("2d"), orig.map((v, i) => Math.abs(v - dec[i]) / tau), side, heat);
  $("codec-stats").innerHTML =
    `ratio ${view.ratio().toFixed(4)}<br>max |error| ${view.max_error().toExponential(2)}<br>` +
    `bound held: ${view.max_error() <= tau ? "yes" : "NO"}`;

  const ctx = $("curve").getContext("2d");
  const { width: W, height: H } = ctx.canvas;
  ctx.clearRect(0, 0, W, H);
  const taus = view.curve_tau();
  const ratios = view.curve_ratio();
  const maxR = Math.max(...ratios, 1.05);
  const pad = 28;
  const xs = taus.map((_, i) => pad + (i * (W - 2 * pad)) / (taus.length - 1));
  const ys = ratios.map((r) => H - pad - (r / maxR) * (H - 2 * pad));
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.strokeStyle = "#1565c0";
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(x, ys[i]) : ctx.moveTo(x, ys[i])));
  ctx.stroke();
  ctx.fillStyle = "#222";
  ctx.font = "10px sans-serif";
  taus.forEach((t, i) => {
    ctx.fillText(t === 0 ? "0" : t.toExponential(0), xs[i] - 10, H - 10);
    ctx.fillRect(xs[i] - 2, ys[i] - 2, 4, 4);
  });
  ctx.fillText(maxR.toFixed(2), 2, pad + 4);
  ctx.fillText("0", 14, H - pad);
}

function runChannels() {
  const gamma = parseFloat($("gamma").value);
  const seed = parseInt($("chan-seed").value, 10) >>> 0;
  $("gamma-val").textContent = gamma.toFixed(3);
  const view = channel_sensitivity(seed, gamma);
  const scores = view.scores();
  const selected = new Set(view.selected());

  const ctx = $("bars").getContext("2d");
  const { width: W, height: H } = ctx.canvas;
  ctx.clearRect(0, 0, W, H);
  const mid = H / 2;
  const bw = W / scores.length;
  ctx.strokeStyle = "#999";
  ctx.beginPath(); ctx.moveTo(0, mid); ctx.lineTo(W, mid); ctx.stroke();
  ctx.font = "11px sans-serif";
  scores.forEach((s, c) => {
    ctx.fillStyle = selected.has(c) ? "#c62828" : "#607d8b";
    const h = s * (mid - 14);
    ctx.fillRect(c * bw + 6, mid - Math.max(h, 0), bw - 12, Math.abs(h));
    ctx.fillStyle = "#222";
    ctx.fillText(s.toFixed(2), c * bw + 8, s >= 0 ? mid + 12 : mid - 4);
    ctx.fillText(`c${c}`, c * bw + 12, H - 3);
  });

  const side = view.side();
  const a = view.flipped_original();
  const b = view.flipped_image();
  let hi = 1e-6;
  for (const v of a) hi = Math.max(hi, v);
  for (const v of b) hi = Math.max(hi, v);
  const m = $("maps").getContext("2d");
  m.clearRect(0, 0, m.canvas.width, m.canvas.height);
  const cell = m.canvas.width / 8;
  for (let c = 0; c < 8; c++) {
    const plane = (arr) => Array.from(arr.slice(c * side * side, (c + 1) * side * side), (v) => v / hi);
    drawMap(m, plane(a), side, grey, c * cell + 2, 2, cell - 4, cell - 4);
    drawMap(m, plane(b), side, grey, c * cell + 2, cell + 6, cell - 4, cell - 4);
    if (selected.has(c)) {
      m.strokeStyle = "#c62828";
      m.lineWidth = 2;
      m.strokeRect(c * cell + 1, 1, cell - 2, 2 * cell + 4);
    }
  }
}

function runShuffle() {
  const n = Math.max(1, Math.min(400, parseInt($("n").value, 10) || 1));
  const k = Math.max(1, parseInt($("k").value, 10) || 1);
  const seed = parseInt($("shuf-seed").value, 10) >>> 0;
  const order = shuffle_trace(n, k, seed);
  const chunks = Math.ceil(n / k);
  const trace = $("trace");
  trace.replaceChildren();
  for (const id of order) {
    const span = document.createElement("span");
    const hue = Math.round((360 * Math.floor(id / k)) / chunks);
    span.style.background = `hsl(${hue} 70% 80%)`;
    span.textContent = id;
    span.title = `sample ${id}, chunk ${Math.floor(id / k)}`;
    trace.append(span);
  }
}

function guard(fn) {
  return () => {
    try {
      fn();
      $("status").textContent = "";
    } catch (e) {
      $("status").textContent = String(e);
    }
  };
}

await init();
const codec = guard(runCodec);
const chans = guard(runChannels);
const shuf = guard(runShuffle);
["tau", "smooth", "codec-seed"].forEach((id) => $(id).addEventListener("input", codec));
["gamma", "chan-seed"].forEach((id) => $(id).addEventListener("input", chans));
["n", "k", "shuf-seed"].forEach((id) => $(id).addEventListener("input", shuf));
codec();
chans();
shuf();
