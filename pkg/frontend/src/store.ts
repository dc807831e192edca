/** Single application state store.
 *
 * Every async source (REST responses, the event socket, the relay socket,
 * the camera reader) funnels its results through Store.update on the main
 * thread; views subscribe and re-render from state alone.  Nothing is
 * painted that did not arrive from the gateway first.
 */

import type {
  Booking,
  ChannelInfo,
  ChatMessage,
  Me,
  Quota,
  Role,
  SessionDescriptor,
  SetupInfo,
  Slot,
} from "./api.js";

export type Route =
  | { name: "login" }
  | { name: "booking" }
  | { name: "courses" }
  | { name: "admin" }
  | { name: "session"; sessionId: string };

export type TileName = "desktop" | "camera" | "conference" | "chat" | "hardware";
export type TileStatus = "idle" | "live" | "degraded";

export interface SessionView {
  sessionId: string;
  participantToken: string;
  descriptor: SessionDescriptor;
  tiles: Record<TileName, TileStatus>;
  tileErrors: Partial<Record<TileName, string>>;
  lastFrameId: number;
  framesRendered: number;
  lastAckedSeq: number;
  channelValues: Record<string, number | boolean>;
}

export interface AppState {
  auth: { token: string; userId: string; role: Role } | null;
  me: Me | null;
  route: Route;
  loginError: string | null;
  setups: SetupInfo[];
  slots: Slot[];
  slotsSetupId: string | null;
  weekStart: string | null;
  bookings: Booking[];
  quota: Quota | null;
  bookingNotice: string | null;
  chat: ChatMessage[];
  chatGroupId: string | null;
  eventsConnected: boolean;
  session: SessionView | null;
}

export function initialState(): AppState {
  return {
    auth: null,
    me: null,
    route: { name: "login" },
    loginError: null,
    setups: [],
    slots: [],
    slotsSetupId: null,
    weekStart: null,
    bookings: [],
    quota: null,
    bookingNotice: null,
    chat: [],
    chatGroupId: null,
    eventsConnected: false,
    session: null,
  };
}

export type Listener = (state: AppState) => void;

export class Store {
  private state: AppState;
  private listeners = new Set<Listener>();

  constructor(state: AppState = initialState()) {
    this.state = state;
  }

  getState(): AppState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  update(mutate: (state: AppState) => void): void {
    mutate(this.state);
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }
}

/** Insert a chat message keeping per-group seq order, dropping duplicates.
 * History fetches and live events race, so both paths land here. */
export function mergeChatMessage(list: ChatMessage[], msg: ChatMessage): ChatMessage[] {
  if (list.some((m) => m.seq === msg.seq)) {
    return list;
  }
  const out = [...list, msg];
  out.sort((a, b) => a.seq - b.seq);
  return out;
}

export function mergeChatHistory(list: ChatMessage[], history: ChatMessage[]): ChatMessage[] {
  let out = list;
  for (const msg of history) {
    out = mergeChatMessage(out, msg);
  }
  return out;
}

export interface GatewayEvent {
  type: string;
  [key: string]: unknown;
}

/** Route one event-socket message into the store. */
export function applyGatewayEvent(store: Store, event: GatewayEvent): void {
  switch (event.type) {
    case "chat": {
      const msg: ChatMessage = {
        id: String(event.message_id),
        group_id: String(event.group_id),
        author: String(event.author),
        body: String(event.body),
        at: String(event.at),
        seq: Number(event.seq),
      };
      store.update((s) => {
        if (s.chatGroupId === null || s.chatGroupId === msg.group_id) {
          s.chat = mergeChatMessage(s.chat, msg);
        }
      });
      break;
    }
    case "sensor":
    case "actuator": {
      const channelId = String(event.channel_id);
      const value = event.value as number | boolean;
      store.update((s) => {
        if (s.session) {
          s.session.channelValues[channelId] = value;
        }
      });
      break;
    }
    case "session": {
      const state = String(event.state);
      const sessionId = String(event.session_id);
      store.update((s) => {
        if (s.session && s.session.sessionId === sessionId) {
          s.session.descriptor.state = state;
        }
      });
      break;
    }
    default:
      // Unknown event kinds are ignored; the server may grow new ones.
      break;
  }
}

export function setTile(
  store: Store,
  tile: TileName,
  status: TileStatus,
  error?: string,
): void {
  store.update((s) => {
    if (!s.session) return;
    s.session.tiles[tile] = status;
    if (status === "degraded") {
      s.session.tileErrors[tile] = error ?? "unavailable";
    } else {
      delete s.session.tileErrors[tile];
    }
  });
}

export function freshSessionView(
  sessionId: string,
  participantToken: string,
  descriptor: SessionDescriptor,
): SessionView {
  return {
    sessionId,
    participantToken,
    descriptor,
    tiles: { desktop: "idle", camera: "idle", conference: "idle", chat: "idle", hardware: "idle" },
    tileErrors: {},
    lastFrameId: 0,
    framesRendered: 0,
    lastAckedSeq: 0,
    channelValues: {},
  };
}

/** Record one decoded desktop frame.  Frame ids must strictly increase;
 * a stale or duplicate id is dropped and reported to the caller. */
export function recordFrame(store: Store, frameId: number): boolean {
  let accepted = false;
  store.update((s) => {
    if (!s.session) return;
    if (frameId <= s.session.lastFrameId) {
      return;
    }
    s.session.lastFrameId = frameId;
    s.session.framesRendered += 1;
    accepted = true;
  });
  return accepted;
}

/** Monday 00:00 UTC of the week containing `instant`, as an ISO string. */
export function weekStartOf(instant: Date): string {
  const d = new Date(Date.UTC(instant.getUTCFullYear(), instant.getUTCMonth(), instant.getUTCDate()));
  const shift = (d.getUTCDay() + 6) % 7;
  d.setUTCDate(d.getUTCDate() - shift);
  return d.toISOString().replace(/\.\d{3}Z$/, "Z");
}

export function shiftWeek(weekStart: string, weeks: number): string {
  const d = new Date(weekStart);
  d.setUTCDate(d.getUTCDate() + weeks * 7);
  return d.toISOString().replace(/\.\d{3}Z$/, "Z");
}

export interface CalendarCell {
  slot: Slot;
  day: number;
  hour: number;
}

/** Arrange slots into a 7-day grid keyed by day index and hour. */
export function calendarGrid(slots: Slot[], weekStart: string): CalendarCell[] {
  const start = new Date(weekStart).getTime();
  const weekMs = 7 * 24 * 3600 * 1000;
  const cells: CalendarCell[] = [];
  for (const slot of slots) {
    const t = new Date(slot.start).getTime();
    if (t < start || t >= start + weekMs) {
      continue;
    }
    const offset = t - start;
    cells.push({
      slot,
      day: Math.floor(offset / (24 * 3600 * 1000)),
      hour: Math.floor((offset % (24 * 3600 * 1000)) / (3600 * 1000)),
    });
  }
  cells.sort((a, b) => a.day - b.day || a.hour - b.hour);
  return cells;
}

export function channelsForWidget(channels: ChannelInfo[]): ChannelInfo[] {
  // Hardware widget renders sensors first, then actuators, stable by id.
  const sensors = channels.filter((c) => c.kind === "sensor");
  const actuators = channels.filter((c) => c.kind === "actuator");
  const byId = (a: ChannelInfo, b: ChannelInfo) => a.channel_id.localeCompare(b.channel_id);
  return [...sensors.sort(byId), ...actuators.sort(byId)];
}
