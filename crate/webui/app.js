// Step sequencer front end for the generation service.

const INSTRUMENTS = ["kick", "snare", "closed_hihat", "open_hihat", "low_tom", "mid_tom", "high_tom", "crash", "ride"];
const STEPS = 32;
export const TEMPERATURE_RANGE = [0.25, 2.5];

export function sliderToTemperature(x) {
  const t = Math.min(1, Math.max(0, x));
  return TEMPERATURE_RANGE[0] + t * (TEMPERATURE_RANGE[1] - TEMPERATURE_RANGE[0]);
}

export function stepSeconds(bpm) {
  return 60 / bpm / 4;
}

const state = {
  grid: INSTRUMENTS.map(() => new Array(STEPS).fill(0)),
  locks: new Array(INSTRUMENTS.length).fill(false),
  pending: false,
};

const $ = (id) => document.getElementById(id);

function showError(msg) {
  const b = $("banner");
  b.textContent = msg;
  b.style.display = "block";
}

function render() {
  const table = $("grid");
  table.innerHTML = "";
  INSTRUMENTS.forEach((name, i) => {
    const tr = document.createElement("tr");
    if (state.locks[i]) tr.className = "locked";
    const th = document.createElement("th");
    th.textContent = (state.locks[i] ? "\u{1F512} " : "") + name;
    if (state.locks[i]) th.className = "locked";
    th.onclick = () => {
      state.locks[i] = !state.locks[i];
      render();
    };
    tr.appendChild(th);
    for (let t = 0; t < STEPS; t++) {
      const td = document.createElement("td");
      const cls = [];
      if (t % 16 === 0) cls.push("bar");
      else if (t % 4 === 0) cls.push("beat");
      if (state.grid[i][t]) cls.push("hit");
      td.className = cls.join(" ");
      td.dataset.step = t;
      td.onclick = () => {
        if (state.locks[i]) return;
        state.grid[i][t] = state.grid[i][t] ? 0 : 1;
        render();
      };
      tr.appendChild(td);
    }
    table.appendChild(tr);
  });
  $("temp").textContent = `T = ${sliderToTemperature(+$("slider").value).toFixed(2)}`;
  $("generate").disabled = state.pending;
}

async function generate() {
  if (state.pending) return;
  const refine = $("refine").checked;
  const grid = state.grid.map((row, i) => (state.locks[i] || refine ? row.slice() : row.map(() => null)));
  const body = {
    grid,
    row_locks: state.locks.slice(),
    temperature: sliderToTemperature(+$("slider").value),
    seed: Math.floor(Math.random() * 2 ** 32),
  };
  state.pending = true;
  render();
  try {
    const resp = await fetch("/api/v1/generate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const v = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      showError(v.field ? `${v.field}: ${v.error}` : v.error || `HTTP ${resp.status}`);
      return;
    }
    // trust but verify: locked rows must come back unchanged
    for (let i = 0; i < INSTRUMENTS.length; i++) {
      if (state.locks[i] && v.grid[i].some((x, t) => x !== state.grid[i][t])) {
        showError(`server changed locked row ${INSTRUMENTS[i]}`);
        return;
      }
    }
    state.grid = v.grid;
  } catch (e) {
    showError(`generate failed: ${e}`);
  } finally {
    state.pending = false;
    render();
  }
}

// playback: one short synthesized voice per instrument
let audio = null;
let timer = null;
let step = 0;
let nextTime = 0;

const VOICES = [
  { freq: 55, decay: 0.25, noise: false },
  { freq: 180, decay: 0.15, noise: true },
  { freq: 8000, decay: 0.05, noise: true },
  { freq: 7000, decay: 0.3, noise: true },
  { freq: 100, decay: 0.2, noise: false },
  { freq: 140, decay: 0.2, noise: false },
  { freq: 190, decay: 0.2, noise: false },
  { freq: 5000, decay: 0.8, noise: true },
  { freq: 3500, decay: 0.5, noise: true },
];

function voice(i, when) {
  const v = VOICES[i];
  const gain = audio.createGain();
  gain.gain.setValueAtTime(0.4, when);
  gain.gain.exponentialRampToValueAtTime(0.001, when + v.decay);
  gain.connect(audio.destination);
  let src;
  if (v.noise) {
    const buf = audio.createBuffer(1, Math.ceil(audio.sampleRate * v.decay), audio.sampleRate);
    const data = buf.getChannelData(0);
    for (let k = 0; k < data.length; k++) data[k] = Math.random() * 2 - 1;
    src = audio.createBufferSource();
    src.buffer = buf;
    const filter = audio.createBiquadFilter();
    filter.type = "bandpass";
    filter.frequency.value = v.freq;
    src.connect(filter).connect(gain);
  } else {
    src = audio.createOscillator();
    src.frequency.setValueAtTime(v.freq * 2, when);
    src.frequency.exponentialRampToValueAtTime(v.freq, when + 0.05);
    src.connect(gain);
  }
  src.start(when);
  src.stop(when + v.decay);
}

function highlight(t) {
  document.querySelectorAll("#grid td.playing").forEach((td) => td.classList.remove("playing"));
  document.querySelectorAll(`#grid td[data-step="${t}"]`).forEach((td) => td.classList.add("playing"));
}

function tick() {
  const dt = stepSeconds(+$("bpm").value || 120);
  while (nextTime < audio.currentTime + 0.1) {
    for (let i = 0; i < INSTRUMENTS.length; i++) if (state.grid[i][step]) voice(i, nextTime);
    const t = step;
    setTimeout(() => timer && highlight(t), Math.max(0, (nextTime - audio.currentTime) * 1000));
    nextTime += dt;
    step = (step + 1) % STEPS;
  }
}

function play() {
  if (timer) return;
  if (!audio) {
    const Ctx = window.AudioContext || window.webkitAudioContext;
    if (!Ctx) {
      $("audio-note").textContent = "audio unavailable in this browser; editing still works";
      $("play").disabled = true;
      return;
    }
    audio = new Ctx();
  }
  audio.resume();
  step = 0;
  nextTime = audio.currentTime + 0.05;
  timer = setInterval(tick, 25);
}

function stop() {
  if (timer) clearInterval(timer);
  timer = null;
  highlight(-1);
}

function exportPattern() {
  const doc = { version: 1, steps: STEPS, instruments: INSTRUMENTS, grid: state.grid, locks: state.locks };
  const a = document.createElement("a");
  a.href = URL.createObjectURL(new Blob([JSON.stringify(doc)], { type: "application/json" }));
  a.download = "pattern.json";
  a.click();
}

async function importPattern(file) {
  try {
    const doc = JSON.parse(await file.text());
    if (doc.version !== 1 || !Array.isArray(doc.grid) || doc.grid.length !== INSTRUMENTS.length) throw new Error("not a pattern file");
    if (doc.grid.some((row) => row.length !== STEPS || row.some((x) => x !== 0 && x !== 1))) throw new Error("grid must be 9 rows of 32 zeros and ones");
    state.grid = doc.grid.map((r) => r.slice());
    if (Array.isArray(doc.locks) && doc.locks.length === INSTRUMENTS.length) state.locks = doc.locks.map(Boolean);
    render();
  } catch (e) {
    showError(`import: ${e.message}`);
  }
}

if (typeof document !== "undefined") {
  $("banner").onclick = () => ($("banner").style.display = "none");
  $("slider").oninput = render;
  $("generate").onclick = generate;
  $("play").onclick = play;
  $("stop").onclick = stop;
  $("export").onclick = exportPattern;
  $("import").onchange = (e) => e.target.files[0] && importPattern(e.target.files[0]);
  render();
}
