import init, { inspect, similarity, forward, guidance } from "./pkg/txdiff_web.js";

const $ = (id) => document.getElementById(id);

function call(f, ...args) {
  const v = JSON.parse(f(...args));
  if (v.error) throw new Error(v.error);
  return v;
}

function show(el, f) {
  try {
    el.classList.remove("error");
    f();
  } catch (e) {
    el.classList.add("error");
    el.textContent = e.message;
  }
}

function runInspect() {
  const out = $("inspect-out");
  show(out, () => {
    const a = call(inspect, $("smi-a").value);
    const b = call(inspect, $("smi-b").value);
    const t = call(similarity, $("smi-a").value, $("smi-b").value);
    const row = (k) => `${k.padEnd(12)} ${String(a[k]).padEnd(32)} ${b[k]}`;
    out.textContent = [
      "canonical", "formula", "atoms", "bonds", "ring_atoms",
      "components", "valence_ok", "scaffold", "fp_bits_set", "fp_total",
    ].map(row).join("\n") + `\n\nTanimoto (count Morgan, r=2): ${t.tanimoto.toFixed(4)}`;
  });
}

function drawCurve(alphaBar, t) {
  const c = $("fw-curve");
  const g = c.getContext("2d");
  const [w, h, pad] = [c.width, c.height, 10];
  g.clearRect(0, 0, w, h);
  const x = (i) => pad + (i / (alphaBar.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - v * (h - 2 * pad);
  g.strokeStyle = "#36c";
  g.beginPath();
  alphaBar.forEach((v, i) => (i ? g.lineTo(x(i), y(v)) : g.moveTo(x(i), y(v))));
  g.stroke();
  g.fillStyle = "#c54";
  g.beginPath();
  g.arc(x(t), y(alphaBar[t]), 4, 0, 2 * Math.PI);
  g.fill();
  g.fillStyle = "#444";
  g.fillText("alpha_bar(t)", pad + 4, pad + 10);
}

function runForward() {
  const out = $("fw-out");
  const T = Number($("fw-T").value);
  const slider = $("fw-t");
  slider.max = T;
  if (Number(slider.value) > T) slider.value = T;
  const t = Number(slider.value);
  $("fw-t-val").textContent = t;
  show(out, () => {
    const v = call(forward, $("fw-smi").value, T, t, $("fw-kernel").value, Number($("fw-seed").value));
    drawCurve(v.alpha_bar, t);
    out.textContent =
      `alpha_bar = ${v.alpha_bar[t].toFixed(4)}\n` +
      `atoms changed = ${v.nodes_changed}, bond slots changed = ${v.edges_changed}\n` +
      `x_t = ${v.smiles}  (${v.valid ? "valid" : "invalid"})`;
  });
}

function runGuidance() {
  const out = $("cfg-out");
  const s = Number($("cfg-s").value);
  $("cfg-s-val").textContent = s.toFixed(1);
  show(out, () => {
    const v = call(guidance, $("cfg-c").value, $("cfg-u").value, s);
    out.replaceChildren();
    v.guided.forEach((_, k) => {
      for (const kind of ["uncond", "cond", "guided"]) {
        const p = v[kind][k];
        const label = document.createElement("span");
        label.textContent = `${kind === "uncond" ? "class " + k : ""} ${kind}`;
        const bar = document.createElement("div");
        bar.className = `bar ${kind}`;
        bar.style.width = `${(100 * p).toFixed(1)}%`;
        const num = document.createElement("span");
        num.textContent = p.toFixed(3);
        out.append(label, bar, num);
      }
    });
  });
}

await init();
$("inspect-btn").addEventListener("click", runInspect);
for (const id of ["fw-smi", "fw-kernel", "fw-T", "fw-seed", "fw-t"]) $(id).addEventListener("input", runForward);
for (const id of ["cfg-c", "cfg-u", "cfg-s"]) $(id).addEventListener("input", runGuidance);
runInspect();
runForward();
runGuidance();
