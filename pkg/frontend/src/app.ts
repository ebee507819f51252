/** Browser wiring: DOM, WebSocket transport, canvas painting.  All the
 * logic worth testing lives in the imported modules; this file only
 * connects them to elements on the page. */
import { DashboardClient, Transport } from "./client.js";
import { toPolyline } from "./charts.js";
import { renderHeatmap } from "./heatmap.js";
import { Channel, FaultKind, N_CHANNELS } from "./protocol.js";
import { SessionStore } from "./state.js";

const store = new SessionStore();
const client = new DashboardClient(store);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const endpointInput = el<HTMLInputElement>("endpoint");
const timeScaleInput = el<HTMLInputElement>("time-scale");
const connectBtn = el<HTMLButtonElement>("connect");
const disconnectBtn = el<HTMLButtonElement>("disconnect");
const statusLabel = el<HTMLSpanElement>("status");
const staleBanner = el<HTMLDivElement>("stale-banner");
const ffcBadge = el<HTMLSpanElement>("ffc-badge");
const dropsLabel = el<HTMLSpanElement>("drops");
const heatCanvas = el<HTMLCanvasElement>("heatmap");
const tempCanvas = el<HTMLCanvasElement>("temp-chart");
const driveCanvas = el<HTMLCanvasElement>("drive-chart");
const channelSelect = el<HTMLSelectElement>("channel");
const eventFeed = el<HTMLUListElement>("events");
const pendingList = el<HTMLUListElement>("pending");
const formNote = el<HTMLSpanElement>("form-note");

for (let ch = 0; ch < N_CHANNELS; ch++) {
  const opt = document.createElement("option");
  opt.value = String(ch);
  opt.textContent = `channel ${ch}`;
  channelSelect.appendChild(opt);
}
const allOpt = document.createElement("option");
allOpt.value = "all";
allOpt.textContent = "all channels";
channelSelect.appendChild(allOpt);

function selectedChannel(): Channel {
  const v = channelSelect.value;
  return v === "all" ? "all" : Number(v);
}

let socket: WebSocket | null = null;

function connect(): void {
  disconnect();
  const url = endpointInput.value.trim();
  store.setStatus("connecting");
  const ws = new WebSocket(url);
  socket = ws;
  const transport: Transport = {
    send: (line) => ws.send(line),
    close: () => ws.close(),
  };
  ws.onopen = () => client.attach(transport);
  ws.onmessage = (ev) => {
    if (typeof ev.data === "string") {
      for (const line of ev.data.split("\n")) {
        if (!line.trim()) continue;
        try {
          client.onLine(line);
        } catch (err) {
          store.addEvent("error", String(err));
        }
      }
    }
  };
  ws.onclose = () => {
    if (socket === ws) {
      socket = null;
      client.detach("socket closed");
    }
  };
  ws.onerror = () => store.addEvent("error", `websocket error (${url})`);
}

function disconnect(): void {
  if (socket) {
    const ws = socket;
    socket = null;
    ws.close();
    client.detach("disconnected by user");
  }
}

connectBtn.onclick = connect;
disconnectBtn.onclick = disconnect;

function noteResult(res: { ok: boolean } & Record<string, unknown>): void {
  formNote.textContent = res.ok ? "" : String(res["problem"] ?? "rejected");
}

el<HTMLButtonElement>("apply-setpoint").onclick = () => {
  const value = Number(el<HTMLInputElement>("setpoint-value").value);
  noteResult(client.sendSetpoint(selectedChannel(), value));
};
el<HTMLButtonElement>("apply-gains").onclick = () => {
  const ch = selectedChannel();
  if (ch === "all") {
    noteResult({ ok: false, problem: "pick a single channel for gains" });
    return;
  }
  const prop = Number(el<HTMLInputElement>("gain-prop").value);
  const integ = Number(el<HTMLInputElement>("gain-integ").value);
  noteResult(client.sendGains(ch, prop, integ));
};
el<HTMLButtonElement>("inject-fault").onclick = () => {
  const kind = el<HTMLSelectElement>("fault-kind").value as FaultKind;
  const magnitude = Number(el<HTMLInputElement>("fault-magnitude").value || "0");
  const durRaw = el<HTMLInputElement>("fault-duration").value.trim();
  const duration = durRaw ? Number(durRaw) : undefined;
  noteResult(client.sendFault(kind, selectedChannel(), magnitude, duration));
};
el<HTMLButtonElement>("pause").onclick = () => noteResult(client.pause());
el<HTMLButtonElement>("resume").onclick = () => noteResult(client.resume());
el<HTMLButtonElement>("reset").onclick = () => noteResult(client.reset());
el<HTMLButtonElement>("snapshot").onclick = () => noteResult(client.requestSnapshot());

const offscreen = document.createElement("canvas");
offscreen.width = 80;
offscreen.height = 60;

function paintHeatmap(): void {
  const render = renderHeatmap(store.latestFrame, store.status === "connected");
  const octx = offscreen.getContext("2d")!;
  octx.putImageData(new ImageData(render.rgba, render.width, render.height), 0, 0);
  const ctx = heatCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(offscreen, 0, 0, heatCanvas.width, heatCanvas.height);
  const sx = heatCanvas.width / render.width;
  const sy = heatCanvas.height / render.height;
  ctx.fillStyle = "#00e000";
  for (const m of render.markers) {
    ctx.beginPath();
    ctx.arc((m.x + 0.5) * sx, (m.y + 0.5) * sy, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  ffcBadge.style.visibility = render.ffc ? "visible" : "hidden";
  staleBanner.style.display = render.stale ? "block" : "none";
}

function paintChart(
  canvas: HTMLCanvasElement,
  seriesList: { samples: { t: number; v: number }[]; color: string }[],
): void {
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const all = seriesList.map((s) => s.samples);
  let tMin = Infinity;
  let tMax = -Infinity;
  let vMin = Infinity;
  let vMax = -Infinity;
  for (const samples of all) {
    for (const { t, v } of samples) {
      tMin = Math.min(tMin, t);
      tMax = Math.max(tMax, t);
      vMin = Math.min(vMin, v);
      vMax = Math.max(vMax, v);
    }
  }
  if (!Number.isFinite(tMin) || tMax <= tMin) return;
  const pad = (vMax - vMin || 1) * 0.05;
  const ext = { tMin, tMax, vMin: vMin - pad, vMax: vMax + pad };
  for (const { samples, color } of seriesList) {
    const pts = toPolyline(samples, canvas.width, canvas.height, ext);
    ctx.strokeStyle = color;
    ctx.beginPath();
    for (let i = 0; i < samples.length; i++) {
      const x = pts[i * 2]!;
      const y = pts[i * 2 + 1]!;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

function paintLists(): void {
  statusLabel.textContent =
    store.status + (store.drops ? ` (dropped ${store.drops} frames)` : "");
  dropsLabel.textContent = String(store.drops);
  eventFeed.replaceChildren(
    ...store.events
      .slice(-30)
      .reverse()
      .map((e) => {
        const li = document.createElement("li");
        li.className = `event-${e.kind}`;
        li.textContent = `[${e.kind}] ${e.text}`;
        return li;
      }),
  );
  const items: HTMLLIElement[] = [];
  for (const action of store.pending.values()) {
    const li = document.createElement("li");
    li.textContent = `waiting: ${action.summary}`;
    items.push(li);
  }
  for (const action of store.retryPrompts) {
    const li = document.createElement("li");
    li.textContent = `no reply: ${action.summary} `;
    const btn = document.createElement("button");
    btn.textContent = "retry";
    btn.onclick = () => client.retry(action.seq);
    li.appendChild(btn);
    items.push(li);
  }
  pendingList.replaceChildren(...items);
}

function frameLoop(): void {
  paintHeatmap();
  const chRaw = channelSelect.value;
  const ch = chRaw === "all" ? 0 : Number(chRaw);
  paintChart(tempCanvas, [
    { samples: store.setpointTrace[ch]!.toArray(), color: "#888" },
    { samples: store.measured[ch]!.toArray(), color: "#ff8c00" },
  ]);
  paintChart(driveCanvas, [{ samples: store.driveTrace[ch]!.toArray(), color: "#4caf50" }]);
  paintLists();
  requestAnimationFrame(frameLoop);
}

// the time-scale field mirrors the factor the service was launched with
// (there is no wire command to change it); it only annotates the charts
timeScaleInput.onchange = () => {
  const x = Number(timeScaleInput.value);
  store.addEvent("info", `time scale noted as ${x}x (set server-side at launch)`);
};

requestAnimationFrame(frameLoop);
