import init, { overview, convergence, analyze, null_histogram } from "./pkg/slime_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guarded(fn) {
  return () => {
    $("status").className = "";
    try {
      fn();
      $("status").textContent = "Ready.";
    } catch (err) {
      $("status").className = "error";
      $("status").textContent = String(err.message ?? err);
    }
  };
}

function shade(value, scale) {
  const a = Math.min(Math.abs(value) / scale, 1);
  return value > 0 ? `rgba(214,39,40,${a})` : `rgba(44,160,44,${a})`;
}

function showConvergence() {
  const res = JSON.parse(convergence($("doc").value, num("maxlog")));
  $("convergence").innerHTML = res.svg;
  const tokens = $("tokens");
  tokens.replaceChildren();
  if (res.attributions) {
    const values = res.attributions.values;
    const scale = Math.max(...values.map(Math.abs), 1e-12);
    res.attributions.tokens.forEach((tok, i) => {
      const span = document.createElement("span");
      span.textContent = tok;
      span.title = values[i].toExponential(3);
      span.style.background = shade(values[i], scale);
      tokens.appendChild(span);
    });
  }
}

function statsArgs() {
  return [num("subsamples"), num("low"), num("high"), BigInt(num("seed"))];
}

function showAnalysis() {
  const res = JSON.parse(analyze(...statsArgs()));
  $("scatter").innerHTML = res.scatter;
  $("bars").innerHTML = res.bars;
  const cols = ["category", "n_tokens", "mean_attr", "attr_group", "attr_pctile", "feature_auc", "delta_auc", "auc_impact", "verdict"];
  const fmt = (v) => (typeof v === "number" && !Number.isInteger(v) ? v.toFixed(4) : v ?? "");
  const head = `<tr>${cols.map((c) => `<th>${c}</th>`).join("")}</tr>`;
  const body = res.rows.map((r) => `<tr>${cols.map((c) => `<td>${fmt(r[c])}</td>`).join("")}</tr>`).join("");
  $("table").innerHTML = `<table>${head}${body}</table>`;
}

function showNull() {
  const res = JSON.parse(null_histogram($("category").value, ...statsArgs()));
  if (!res.svg) {
    $("null-summary").textContent = `${res.category}: ${res.note}`;
    $("histogram").replaceChildren();
    return;
  }
  $("null-summary").textContent =
    `${res.category}: ${res.n_tokens} tokens, observed mean ${res.observed.toExponential(3)}, ` +
    `thresholds [${res.low_threshold.toExponential(3)}, ${res.high_threshold.toExponential(3)}]`;
  $("histogram").innerHTML = res.svg;
}

function fill(select, items) {
  for (const { value, text } of items) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = text;
    select.appendChild(opt);
  }
}

async function main() {
  await init();
  // yield once so the loading message paints before training blocks the thread
  await new Promise((r) => setTimeout(r, 0));
  const info = JSON.parse(overview());
  fill($("doc"), info.documents.map((d) => ({ value: d.id, text: `${d.id} (${d.label ? "AD" : "control"})` })));
  fill($("category"), info.categories.map((c) => ({ value: c, text: c })));
  $("seed").value = info.seed;
  $("category").value = "filler";
  $("run-convergence").onclick = guarded(showConvergence);
  $("run-analysis").onclick = guarded(showAnalysis);
  $("run-null").onclick = guarded(showNull);
  guarded(() => {
    showConvergence();
    showAnalysis();
    showNull();
  })();
}

main().catch((err) => {
  $("status").className = "error";
  $("status").textContent = String(err.message ?? err);
});
