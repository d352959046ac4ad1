import init, { blend_preview, preview_size, optimizer_path, fairness_report } from "./pkg/fairforge_web.js";

const GROUPS = ["B-M", "B-F", "W-M", "W-F", "A-M", "A-F", "O-M", "O-F"];

const CONTROLS = {
  blend: [
    ["group", 0, 7, 1, 2],
    ["face seed", 0, 99, 1, 3],
    ["scale", 0.8, 1.2, 0.01, 1.05],
    ["rotation", -20, 20, 0.5, 8],
    ["brightness", -0.3, 0.3, 0.01, 0.08],
    ["contrast", 0.6, 1.4, 0.01, 1.1],
    ["center x", 0.2, 0.8, 0.01, 0.5],
    ["center y", 0.2, 0.8, 0.01, 0.5],
    ["half extent", 0.05, 0.5, 0.01, 0.25],
    ["feather", 0, 12, 0.5, 4],
    ["blend ratio", 0, 1, 0.01, 0.8],
  ],
  sam: [
    ["a", 0.1, 10, 0.1, 4],
    ["b", 0.1, 10, 0.1, 1],
    ["c", -1.5, 1.5, 0.05, 0.5],
    ["x0", -2, 2, 0.05, 1.8],
    ["y0", -2, 2, 0.05, 1.5],
    ["rho", 0, 0.5, 0.01, 0.1],
    ["lr", 0.005, 0.5, 0.005, 0.1],
    ["momentum", 0, 0.95, 0.05, 0],
    ["steps", 1, 200, 1, 40],
  ],
  fair: [
    ["skew", 0, 3, 0.05, 1.5],
    ["threshold", 0.05, 0.95, 0.01, 0.5],
    ["per group", 20, 2000, 20, 400],
    ["seed", 0, 99, 1, 1],
  ],
};

function buildControls(group, onChange) {
  const root = document.querySelector(`[data-group=${group}]`);
  const values = {};
  for (const [name, min, max, step, value] of CONTROLS[group]) {
    const label = document.createElement("label");
    const input = Object.assign(document.createElement("input"), { type: "range", min, max, step, value });
    const out = document.createElement("output");
    const update = () => {
      values[name] = Number(input.value);
      out.textContent = name === "group" ? GROUPS[values[name]] : input.value;
    };
    input.addEventListener("input", () => { update(); onChange(values); });
    update();
    label.append(name, input, out);
    root.append(label);
  }
  onChange(values);
}

function drawBlend(v) {
  const size = preview_size();
  const canvas = document.getElementById("blend-canvas");
  canvas.width = 4 * size;
  canvas.height = size;
  canvas.style.width = `${8 * size}px`;
  const rgba = blend_preview(v["face seed"], v.group, v.scale, v.rotation, v.brightness, v.contrast,
    v["center x"], v["center y"], v["half extent"], v.feather, v["blend ratio"]);
  const image = new ImageData(new Uint8ClampedArray(rgba), 4 * size, size);
  canvas.getContext("2d").putImageData(image, 0, 0);
}

function drawSam(v) {
  const canvas = document.getElementById("sam-canvas");
  const ctx = canvas.getContext("2d");
  const half = canvas.width / 2;
  const toPx = (x, y) => [half + x * half / 2.2, half - y * half / 2.2];
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#ddd";
  for (let level = 0.25; level <= 12; level *= 1.6) {
    ctx.beginPath();
    for (let t = 0; t <= 2 * Math.PI + 0.01; t += 0.02) {
      const dx = Math.cos(t), dy = Math.sin(t);
      const q = 0.5 * (v.a * dx * dx + v.b * dy * dy) + v.c * dx * dy;
      if (q <= 0) continue;
      const r = Math.sqrt(level / q);
      const [px, py] = toPx(r * dx, r * dy);
      ctx.lineTo(px, py);
    }
    ctx.stroke();
  }
  for (const [rho, colour] of [[0, "#1f77b4"], [v.rho, "#d62728"]]) {
    const path = optimizer_path(v.a, v.b, v.c, v.x0, v.y0, rho, v.lr, v.momentum, v.steps);
    ctx.strokeStyle = colour;
    ctx.fillStyle = colour;
    ctx.beginPath();
    for (let i = 0; i < path.length; i += 2) {
      const [px, py] = toPx(path[i], path[i + 1]);
      ctx.lineTo(px, py);
      ctx.fillRect(px - 1.5, py - 1.5, 3, 3);
    }
    ctx.stroke();
  }
}

function pct(x) {
  return x === null ? "n/a" : `${(100 * x).toFixed(2)}%`;
}

function drawFair(v) {
  const report = JSON.parse(fairness_report(v["per group"], v.skew, v.seed, v.threshold));
  document.getElementById("fair-summary").textContent =
    `overall accuracy ${pct(report.overall.accuracy)}, max disparity ${pct(report.max_disparity_accuracy)}, ` +
    `gender gap ${pct(report.gender_marginal.max_disparity_accuracy)}, race gap ${pct(report.race_marginal.max_disparity_accuracy)}`;
  const rows = GROUPS.map((g) => {
    const m = report.per_group[g];
    return `<tr class="${m.present ? "" : "absent"}"><td>${g}</td><td>${m.count}</td>` +
      `<td>${pct(m.accuracy)}</td><td>${pct(m.tpr)}</td><td>${pct(m.auc)}</td></tr>`;
  });
  document.getElementById("fair-table").innerHTML =
    "<tr><th>group</th><th>n</th><th>ACC</th><th>TPR</th><th>AUC</th></tr>" + rows.join("");
}

await init();
buildControls("blend", drawBlend);
buildControls("sam", drawSam);
buildControls("fair", drawFair);
