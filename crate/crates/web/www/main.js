import init, { builtins, render, targetMatch, mutate } from "./pkg/supershape_web.js";

const $ = (id) => document.getElementById(id);
let stl = null;
let triangles = [];
let yaw = 0.6, pitch = -0.5;

function status(text, error = false) {
  $("status").textContent = text;
  $("status").className = error ? "error" : "";
}

// Binary STL: 80-byte header, u32 count, then 50 bytes per facet.
function parseStl(bytes) {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const count = view.getUint32(80, true);
  const tris = new Array(count);
  for (let i = 0; i < count; i++) {
    const base = 84 + 50 * i + 12;
    const v = [];
    for (let k = 0; k < 3; k++) {
      const o = base + 12 * k;
      v.push([view.getFloat32(o, true), view.getFloat32(o + 4, true), view.getFloat32(o + 8, true)]);
    }
    tris[i] = v;
  }
  return tris;
}

function draw() {
  const canvas = $("view");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!triangles.length) return;
  const lo = [Infinity, Infinity, Infinity], hi = [-Infinity, -Infinity, -Infinity];
  for (const t of triangles) for (const p of t) for (let a = 0; a < 3; a++) {
    lo[a] = Math.min(lo[a], p[a]);
    hi[a] = Math.max(hi[a], p[a]);
  }
  const c = lo.map((l, a) => (l + hi[a]) / 2);
  const size = Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]) || 1;
  const scale = 0.8 * Math.min(canvas.width, canvas.height) / size;
  const [cy, sy, cp, sp] = [Math.cos(yaw), Math.sin(yaw), Math.cos(pitch), Math.sin(pitch)];
  const project = ([x, y, z]) => {
    x -= c[0]; y -= c[1]; z -= c[2];
    const x1 = cy * x - sy * y, y1 = sy * x + cy * y;
    const y2 = cp * y1 - sp * z, z2 = sp * y1 + cp * z;
    return [canvas.width / 2 + scale * x1, canvas.height / 2 - scale * z2, y2];
  };
  const faces = triangles.map((t) => {
    const p = t.map(project);
    const ux = p[1][0] - p[0][0], uy = p[1][1] - p[0][1], uz = p[1][2] - p[0][2];
    const vx = p[2][0] - p[0][0], vy = p[2][1] - p[0][1], vz = p[2][2] - p[0][2];
    const n = [uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx];
    const len = Math.hypot(...n) || 1;
    return { p, depth: (p[0][2] + p[1][2] + p[2][2]) / 3, light: Math.abs(n[2] / len) };
  });
  faces.sort((a, b) => b.depth - a.depth);
  for (const f of faces) {
    const g = Math.round(70 + 160 * f.light);
    ctx.fillStyle = ctx.strokeStyle = `rgb(${g},${g},${Math.min(255, g + 25)})`;
    ctx.beginPath();
    ctx.moveTo(f.p[0][0], f.p[0][1]);
    ctx.lineTo(f.p[1][0], f.p[1][1]);
    ctx.lineTo(f.p[2][0], f.p[2][1]);
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }
}

function doRender() {
  status("rendering...");
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const model = render($("genome").value, $("turbine").checked, Number($("smooth").value));
      stl = model.stl;
      triangles = parseStl(stl);
      $("download").disabled = false;
      draw();
      status(`${model.triangles} triangles, ${model.activeVoxels} voxels, ${Math.round(performance.now() - t0)} ms`);
    } catch (e) {
      status(String(e.message ?? e), true);
    }
  }, 0);
}

function doScore() {
  try {
    const m = targetMatch($("genome").value, $("target").value);
    $("match").textContent = `${(100 * m).toFixed(3)}% of voxels match ${$("target").value}`;
    status("");
  } catch (e) {
    status(String(e.message ?? e), true);
  }
}

function doMutate() {
  try {
    const seed = BigInt(Math.max(0, Math.floor(Number($("seed").value) || 0)));
    $("genome").value = JSON.stringify(JSON.parse(mutate($("genome").value, seed)), null, 1);
    $("seed").value = String(seed + 1n);
    doRender();
  } catch (e) {
    status(String(e.message ?? e), true);
  }
}

function download() {
  if (!stl) return;
  const url = URL.createObjectURL(new Blob([stl], { type: "model/stl" }));
  const a = Object.assign(document.createElement("a"), { href: url, download: `${$("builtin").value || "genome"}.stl` });
  a.click();
  URL.revokeObjectURL(url);
}

async function main() {
  await init();
  const all = JSON.parse(builtins());
  for (const b of all) {
    $("builtin").append(new Option(`${b.name} (${b.description})`, b.name));
  }
  const pick = () => {
    const b = all.find((x) => x.name === $("builtin").value);
    $("genome").value = JSON.stringify(b.genome, null, 1);
    $("turbine").checked = b.name.startsWith("vawt");
    doRender();
  };
  $("builtin").addEventListener("change", pick);
  $("render").addEventListener("click", doRender);
  $("score").addEventListener("click", doScore);
  $("mutate").addEventListener("click", doMutate);
  $("download").addEventListener("click", download);

  let drag = null;
  $("view").addEventListener("pointerdown", (e) => { drag = [e.clientX, e.clientY]; });
  window.addEventListener("pointerup", () => { drag = null; });
  window.addEventListener("pointermove", (e) => {
    if (!drag) return;
    yaw += (e.clientX - drag[0]) * 0.01;
    pitch += (e.clientY - drag[1]) * 0.01;
    drag = [e.clientX, e.clientY];
    draw();
  });
  pick();
}

main().catch((e) => status(String(e), true));
