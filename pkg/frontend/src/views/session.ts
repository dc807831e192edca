/** Session workspace: desktop, camera, conference, chat, hardware.
 *
 * Each tile fails independently.  A dead relay socket greys out the
 * desktop canvas while chat keeps flowing; a camera hiccup never touches
 * the input path.  Leaving the view tears down every connection the view
 * opened, so the backend census shows no strays afterwards.
 */

import { ApiClient, ApiError, ChannelInfo, SessionDescriptor } from "../api.js";
import { readCameraStream } from "../camera.js";
import { clear, el } from "../dom.js";
import { EventStream } from "../events.js";
import { RelayClient, SocketLike } from "../relay.js";
import {
  applyGatewayEvent,
  channelsForWidget,
  freshSessionView,
  mergeChatHistory,
  recordFrame,
  setTile,
  Store,
} from "../store.js";

/** Browser WebSocket narrowed to the transport surface the clients use.
 * The cast is safe: handlers only touch event.data, and binaryType is
 * always set to "arraybuffer" before traffic flows. */
function asSocket(ws: WebSocket): SocketLike {
  return ws as unknown as SocketLike;
}

export interface SessionController {
  root: HTMLElement;
  unmount(): void;
}

export function mountSession(
  store: Store,
  api: ApiClient,
  sessionId: string,
): SessionController {
  const root = el("main", { class: "session" });
  const statusLine = el("p", { class: "status", role: "status" });
  const closers: (() => void)[] = [];
  let unsubscribe = () => {};

  const leave = () => {
    store.update((s) => {
      s.route = { name: "booking" };
    });
  };

  const endSession = async () => {
    try {
      await api.endSession(sessionId);
    } catch (err) {
      statusLine.textContent = err instanceof ApiError ? err.message : "end failed";
      return;
    }
    leave();
  };

  root.append(
    el(
      "header",
      {},
      el("h1", {}, "Session"),
      el("button", { onclick: leave }, "leave"),
      el("button", { onclick: () => void endSession() }, "end session"),
    ),
    statusLine,
  );

  void (async () => {
    let descriptor: SessionDescriptor;
    let participantToken: string;
    try {
      const joined = await api.joinSession(sessionId);
      participantToken = joined.participant_token;
      descriptor = joined.descriptor;
    } catch (err) {
      statusLine.textContent =
        err instanceof ApiError ? `cannot join: ${err.message}` : "cannot join session";
      return;
    }
    store.update((s) => {
      s.session = freshSessionView(sessionId, participantToken, descriptor);
      s.chatGroupId = descriptor.chat_group_id;
      s.chat = [];
    });

    const tiles = el("div", { class: "tiles" });
    root.append(
      el(
        "p",
        {},
        `${descriptor.setup_name} until ${descriptor.slot.end}`,
      ),
      tiles,
    );

    mountDesktopTile(tiles, store, api, descriptor, participantToken, closers);
    mountCameraTile(tiles, store, api, descriptor, participantToken, closers);
    mountConferenceTile(tiles, store, descriptor);
    mountChatTile(tiles, store, api, descriptor, closers);
    mountHardwareTile(tiles, store, api, descriptor, participantToken);

    unsubscribe = store.subscribe((s) => {
      const view = s.session;
      if (!view) return;
      const parts = [
        `frames ${view.framesRendered} (last id ${view.lastFrameId})`,
        `acked input ${view.lastAckedSeq}`,
        s.eventsConnected ? "events live" : "events down",
      ];
      const bad = Object.entries(view.tileErrors).map(([tile, msg]) => `${tile}: ${msg}`);
      statusLine.textContent = parts.concat(bad).join(" | ");
    });
  })();

  return {
    root,
    unmount() {
      unsubscribe();
      for (const close of closers.splice(0)) {
        try {
          close();
        } catch {
          // teardown must not throw mid-navigation
        }
      }
      store.update((s) => {
        s.session = null;
        s.chatGroupId = null;
        s.eventsConnected = false;
      });
    },
  };
}

function mountDesktopTile(
  parent: HTMLElement,
  store: Store,
  api: ApiClient,
  descriptor: SessionDescriptor,
  participantToken: string,
  closers: (() => void)[],
): void {
  const canvas = el("canvas", { tabindex: "0", width: "320", height: "240" });
  const tile = el("section", { class: "tile desktop" }, el("h2", {}, "Remote desktop"), canvas);
  parent.append(tile);
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    setTile(store, "desktop", "degraded", "no canvas 2d context");
    return;
  }

  let relay: RelayClient;
  try {
    const ws = new WebSocket(api.socketUrl(descriptor.relay_path, participantToken));
    relay = new RelayClient(asSocket(ws), {
      onFrame(frame) {
        if (!recordFrame(store, frame.frameId)) {
          return; // stale or duplicate id, never paint backwards
        }
        canvas.width = frame.width;
        canvas.height = frame.height;
        const image = ctx.createImageData(frame.width, frame.height);
        const rgba = image.data;
        for (let p = 0, q = 0; p < frame.rgb.length; p += 3, q += 4) {
          rgba[q] = frame.rgb[p];
          rgba[q + 1] = frame.rgb[p + 1];
          rgba[q + 2] = frame.rgb[p + 2];
          rgba[q + 3] = 255;
        }
        ctx.putImageData(image, 0, 0);
        setTile(store, "desktop", "live");
      },
      onAck(ack) {
        store.update((s) => {
          if (s.session) s.session.lastAckedSeq = ack.clientSeq;
        });
      },
      onClose(code, reason) {
        setTile(store, "desktop", "degraded", `relay closed (${code} ${reason})`.trim());
      },
      onError() {
        setTile(store, "desktop", "degraded", "relay error");
      },
    });
  } catch {
    setTile(store, "desktop", "degraded", "relay connect failed");
    return;
  }
  closers.push(() => relay.close());

  canvas.addEventListener("keydown", (event) => {
    relay.sendKeyDown(event.keyCode || 0);
    event.preventDefault();
  });
  canvas.addEventListener("keyup", (event) => {
    relay.sendKeyUp(event.keyCode || 0);
    event.preventDefault();
  });
  canvas.addEventListener("pointermove", (event) => {
    relay.sendPointerMove(Math.max(0, event.offsetX | 0), Math.max(0, event.offsetY | 0));
  });
  canvas.addEventListener("pointerdown", (event) => {
    canvas.focus();
    relay.sendPointerButton(event.button + 1, Math.max(0, event.offsetX | 0), Math.max(0, event.offsetY | 0));
  });
}

function mountCameraTile(
  parent: HTMLElement,
  store: Store,
  api: ApiClient,
  descriptor: SessionDescriptor,
  participantToken: string,
  closers: (() => void)[],
): void {
  const img = el("img", { alt: "bench camera" });
  const tile = el("section", { class: "tile camera" }, el("h2", {}, "Bench camera"), img);
  parent.append(tile);

  const controller = new AbortController();
  closers.push(() => controller.abort());
  let lastUrl: string | null = null;
  closers.push(() => {
    if (lastUrl) URL.revokeObjectURL(lastUrl);
  });

  void fetch(api.cameraUrl(descriptor.camera_path, participantToken), {
    signal: controller.signal,
  })
    .then((resp) =>
      readCameraStream(resp, (part) => {
        const url = URL.createObjectURL(new Blob([part.jpeg.slice().buffer], { type: "image/jpeg" }));
        img.src = url;
        if (lastUrl) URL.revokeObjectURL(lastUrl);
        lastUrl = url;
        setTile(store, "camera", "live");
      }),
    )
    .catch((err: unknown) => {
      if (!controller.signal.aborted) {
        setTile(store, "camera", "degraded", err instanceof Error ? err.message : "stream failed");
      }
    });
}

function mountConferenceTile(
  parent: HTMLElement,
  store: Store,
  descriptor: SessionDescriptor,
): void {
  // Third-party surface stays sandboxed; it gets no scripting escape
  // into the dashboard no matter what the conference origin serves.
  const frame = el("iframe", {
    src: descriptor.conference.url,
    sandbox: "allow-scripts allow-same-origin",
    title: "conference",
  });
  parent.append(
    el("section", { class: "tile conference" }, el("h2", {}, "Conference"), frame),
  );
  setTile(store, "conference", "live");
}

function mountChatTile(
  parent: HTMLElement,
  store: Store,
  api: ApiClient,
  descriptor: SessionDescriptor,
  closers: (() => void)[],
): void {
  const list = el("ul", { class: "chat-log" });
  const input = el("input", { name: "chat", maxlength: "4096" });
  const form = el(
    "form",
    {
      onsubmit: (event: Event) => {
        event.preventDefault();
        const body = input.value;
        if (!body.trim()) return;
        input.value = "";
        void api.postChat(descriptor.chat_group_id, body).catch((err: unknown) => {
          setTile(store, "chat", "degraded", err instanceof ApiError ? err.message : "post failed");
        });
      },
    },
    input,
    el("button", { type: "submit" }, "send"),
  );
  parent.append(el("section", { class: "tile chat" }, el("h2", {}, "Group chat"), list, form));

  const paint = () => {
    clear(list);
    for (const msg of store.getState().chat) {
      list.append(el("li", {}, `${msg.author}: ${msg.body}`));
    }
    list.scrollTop = list.scrollHeight;
  };
  closers.push(store.subscribe(paint));

  void api
    .chatHistory(descriptor.chat_group_id)
    .then(({ messages }) => {
      store.update((s) => {
        s.chat = mergeChatHistory(s.chat, messages);
      });
      setTile(store, "chat", "live");
    })
    .catch(() => setTile(store, "chat", "degraded", "history unavailable"));

  try {
    const token = api.token ?? "";
    const ws = new WebSocket(api.socketUrl(descriptor.events_path, token));
    const stream = new EventStream(asSocket(ws), {
      onEvent: (event) => applyGatewayEvent(store, event),
      onStatus: (connected) =>
        store.update((s) => {
          s.eventsConnected = connected;
        }),
    });
    closers.push(() => stream.close());
  } catch {
    setTile(store, "chat", "degraded", "event stream failed");
  }
}

function mountHardwareTile(
  parent: HTMLElement,
  store: Store,
  api: ApiClient,
  descriptor: SessionDescriptor,
  participantToken: string,
): void {
  const channels = channelsForWidget(descriptor.channels);
  const tile = el("section", { class: "tile hardware" }, el("h2", {}, "Bench I/O"));
  parent.append(tile);
  if (channels.length === 0) {
    tile.style.display = "none"; // nothing wired on this setup
    return;
  }

  const rows = el("table", {});
  tile.append(rows);

  const valueCell = new Map<string, HTMLElement>();
  for (const ch of channels) {
    const value = el("td", { class: "value" }, "?");
    valueCell.set(ch.channel_id, value);
    const row = el("tr", {}, el("td", {}, ch.channel_id), value, el("td", {}, ch.unit ?? ""));
    rows.append(row);
    row.append(controlsFor(ch, api, participantToken, store));
  }

  store.subscribe((s) => {
    if (!s.session) return;
    for (const [channelId, v] of Object.entries(s.session.channelValues)) {
      const cell = valueCell.get(channelId);
      if (cell) cell.textContent = formatValue(v);
    }
  });
  setTile(store, "hardware", "live");
}

function formatValue(v: number | boolean): string {
  return typeof v === "boolean" ? (v ? "on" : "off") : v.toFixed(3);
}

function controlsFor(
  ch: ChannelInfo,
  api: ApiClient,
  participantToken: string,
  store: Store,
): HTMLElement {
  const cell = el("td", { class: "controls" });
  const report = (channelId: string, value: number | boolean) =>
    store.update((s) => {
      if (s.session) s.session.channelValues[channelId] = value;
    });
  const fail = (err: unknown) =>
    setTile(store, "hardware", "degraded", err instanceof ApiError ? err.message : "io failed");

  if (ch.kind === "sensor") {
    cell.append(
      el(
        "button",
        {
          onclick: () =>
            void api
              .readChannel(ch.channel_id, participantToken)
              .then((out) => report(out.channel_id, out.value))
              .catch(fail),
        },
        "read",
      ),
    );
  } else if (ch.datatype === "bool") {
    cell.append(
      el(
        "button",
        {
          onclick: () => {
            const current = store.getState().session?.channelValues[ch.channel_id];
            void api
              .writeChannel(ch.channel_id, participantToken, !(current === true))
              .then((out) => report(out.channel_id, out.value))
              .catch(fail);
          },
        },
        "toggle",
      ),
    );
  } else {
    const input = el("input", { type: "number", step: "0.1", value: "0" });
    cell.append(
      input,
      el(
        "button",
        {
          onclick: () =>
            void api
              .writeChannel(ch.channel_id, participantToken, Number(input.value))
              .then((out) => report(out.channel_id, out.value))
              .catch(fail),
        },
        "set",
      ),
    );
  }
  return cell;
}
