import init, { irfCurve, lintItem, simulateAndFit } from "./pkg/itemgauge_wasm.js";

const $ = (id) => document.getElementById(id);

function drawIrf() {
  const alpha = Number($("alpha").value);
  const delta = Number($("delta").value);
  $("alpha-v").textContent = alpha.toFixed(2);
  $("delta-v").textContent = delta.toFixed(2);
  const canvas = $("irf-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const lo = -4, hi = 4, n = 161;
  const ys = irfCurve(alpha, delta, lo, hi, n);
  const px = (t) => ((t - lo) / (hi - lo)) * (w - 40) + 30;
  const py = (p) => h - 20 - p * (h - 40);

  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#bbb";
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.beginPath();
  for (let t = lo; t <= hi; t++) {
    ctx.moveTo(px(t), py(0));
    ctx.lineTo(px(t), py(0) + 4);
    ctx.fillText(String(t), px(t) - 3, h - 4);
  }
  ctx.moveTo(px(lo), py(0));
  ctx.lineTo(px(hi), py(0));
  ctx.moveTo(px(lo), py(0.5));
  ctx.lineTo(px(hi), py(0.5));
  ctx.stroke();
  ctx.fillText("0.5", 4, py(0.5) + 4);

  ctx.strokeStyle = "#1565c0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ys.forEach((p, k) => {
    const x = px(lo + ((hi - lo) * k) / (n - 1));
    k === 0 ? ctx.moveTo(x, py(p)) : ctx.lineTo(x, py(p));
  });
  ctx.stroke();
  ctx.lineWidth = 1;
}

function runLint() {
  const options = $("options").value.split("\n").map((s) => s.trim()).filter(Boolean);
  const item = { stem: $("stem").value, options, correct_index: Number($("correct").value) - 1 };
  const out = $("lint-out");
  try {
    const findings = JSON.parse(lintItem(JSON.stringify(item)));
    const hits = findings.filter((f) => f.flagged);
    const rows = findings
      .map((f) => `<tr class="${f.flagged ? "flagged" : ""}"><td style="text-align:left">${f.criterion}</td>` +
        `<td>${f.flagged ? "yes" : "no"}</td><td style="text-align:left">${f.tier}</td>` +
        `<td style="text-align:left">${escapeHtml(f.evidence ?? "")}</td></tr>`)
      .join("");
    out.innerHTML = `<p>${hits.length} of ${findings.length} criteria flagged.</p>` +
      `<table><tr><th>criterion</th><th>flagged</th><th>tier</th><th>evidence</th></tr>${rows}</table>`;
  } catch (e) {
    out.innerHTML = `<p class="error">${escapeHtml(String(e.message ?? e))}</p>`;
  }
}

function runFit() {
  const out = $("fit-out");
  out.textContent = "fitting...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const rows = JSON.parse(simulateAndFit(Number($("n-items").value), Number($("n-students").value), BigInt($("seed").value)));
      const ms = performance.now() - t0;
      const rmse = (key) => Math.sqrt(rows.reduce((s, r) => s + (r[key] - r["true_" + key]) ** 2, 0) / rows.length);
      const body = rows
        .map((r) => `<tr><td style="text-align:left">${r.item_id}</td><td>${r.true_alpha.toFixed(3)}</td><td>${r.alpha.toFixed(3)}</td>` +
          `<td>${r.true_delta.toFixed(3)}</td><td>${r.delta.toFixed(3)}</td><td style="text-align:left">${r.flags.join(", ")}</td></tr>`)
        .join("");
      out.innerHTML = `<p>${rows.length} items fitted in ${ms.toFixed(0)} ms. RMSE α ${rmse("alpha").toFixed(3)}, δ ${rmse("delta").toFixed(3)}.</p>` +
        `<table><tr><th>item</th><th>true α</th><th>α̂</th><th>true δ</th><th>δ̂</th><th>flags</th></tr>${body}</table>`;
    } catch (e) {
      out.innerHTML = `<p class="error">${escapeHtml(String(e.message ?? e))}</p>`;
    }
  }, 10);
}

function escapeHtml(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

await init();
$("alpha").addEventListener("input", drawIrf);
$("delta").addEventListener("input", drawIrf);
$("lint-run").addEventListener("click", runLint);
$("fit-run").addEventListener("click", runFit);
drawIrf();
runLint();
