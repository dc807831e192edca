/** Thin typed client for the gateway REST surface.
 *
 * Every call goes through request(), which unwraps the gateway's uniform
 * error envelope into an ApiError so views can branch on the machine
 * readable code (SlotTaken vs QuotaExceeded matter to the calendar).
 */

export type Role = "student" | "teacher" | "administrator";

export interface LoginResult {
  token: string;
  user_id: string;
  role: Role;
  expires_at: string;
}

export interface Me {
  user: { id: string; display_name: string; role: Role };
  groups: { id: string; course_id: string; member_ids: string[] }[];
  courses: { id: string; title: string }[];
}

export interface ChannelInfo {
  channel_id: string;
  kind: "sensor" | "actuator";
  datatype: "float" | "bool";
  unit: string | null;
  bounds: [number, number] | null;
}

export interface SetupInfo {
  id: string;
  name: string;
  channels: ChannelInfo[];
  enabled: boolean;
}

export interface Slot {
  id: string;
  setup_id: string;
  start: string;
  end: string;
  minutes: number;
  available: boolean;
}

export interface Booking {
  id: string;
  slot_id: string;
  group_id: string;
  state: string;
  created_at: string;
  slot: Slot;
  session_id?: string | null;
  session_state?: string | null;
}

export interface Quota {
  group_id: string;
  week: string;
  held: number;
  remaining: number;
  limit: number | null;
}

export interface SessionRecord {
  id: string;
  booking_id: string;
  state: string;
  started_at: string;
  ended_at: string | null;
  conference_room: string;
  participant_ids: string[];
}

export interface SessionDescriptor {
  session_id: string;
  state: string;
  group_id: string;
  setup_id: string;
  setup_name: string;
  slot: { start: string; end: string };
  relay_path: string;
  events_path: string;
  camera_path: string;
  conference: { room_id: string; url: string };
  channels: ChannelInfo[];
  chat_group_id: string;
  token_expires_at: string;
}

export interface JoinResult {
  participant_token: string;
  expires_at: string;
  descriptor: SessionDescriptor;
}

export interface ChatMessage {
  id: string;
  group_id: string;
  author: string;
  body: string;
  at: string;
  seq: number;
}

export interface StatusReport {
  pools: Record<string, unknown>;
  live_rooms: number;
  relay: Record<string, number>;
  subscribers: number;
  notices: [string, string][];
  seq: number;
}

export interface DesktopDebug {
  inputs: {
    kind: string;
    relay_seq: number;
    client_tag: number;
    client_seq: number;
    fields: number[];
  }[];
  last_frame_id: number;
}

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export class ApiClient {
  token: string | null = null;

  constructor(
    public readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    headers?: Record<string, string>,
  ): Promise<T> {
    const all: Record<string, string> = { ...headers };
    if (body !== undefined) {
      all["Content-Type"] = "application/json";
    }
    if (this.token) {
      all["Authorization"] = `Bearer ${this.token}`;
    }
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: all,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    let parsed: unknown = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = null;
    }
    if (!resp.ok) {
      const env = parsed as { error?: { code?: string; message?: string } } | null;
      const code = env?.error?.code ?? `Http${resp.status}`;
      const message = env?.error?.message ?? resp.statusText;
      throw new ApiError(code, message, resp.status);
    }
    return parsed as T;
  }

  async login(displayName: string, secret: string): Promise<LoginResult> {
    const out = await this.request<LoginResult>("POST", "/api/auth/login", {
      display_name: displayName,
      secret,
    });
    this.token = out.token;
    return out;
  }

  async logout(): Promise<void> {
    await this.request<{ ok: boolean }>("POST", "/api/auth/logout", {});
    this.token = null;
  }

  me(): Promise<Me> {
    return this.request("GET", "/api/me");
  }

  listSetups(): Promise<{ setups: SetupInfo[] }> {
    return this.request("GET", "/api/setups");
  }

  createCourse(title: string): Promise<{ id: string; title: string; teacher_id: string }> {
    return this.request("POST", "/api/courses", { title });
  }

  listSlots(setupId: string, from?: string, to?: string): Promise<{ slots: Slot[] }> {
    const q = new URLSearchParams();
    if (from) q.set("from", from);
    if (to) q.set("to", to);
    const suffix = q.toString() ? `?${q}` : "";
    return this.request("GET", `/api/setups/${setupId}/slots${suffix}`);
  }

  bookSlot(groupId: string, slotId: string): Promise<Booking> {
    return this.request("POST", "/api/bookings", { group_id: groupId, slot_id: slotId });
  }

  cancelBooking(bookingId: string): Promise<Booking> {
    return this.request("DELETE", `/api/bookings/${bookingId}`);
  }

  groupBookings(groupId: string): Promise<{ bookings: Booking[] }> {
    return this.request("GET", `/api/groups/${groupId}/bookings`);
  }

  quota(groupId: string, week?: string): Promise<Quota> {
    const suffix = week ? `?week=${encodeURIComponent(week)}` : "";
    return this.request("GET", `/api/groups/${groupId}/quota${suffix}`);
  }

  startSession(bookingId: string): Promise<SessionRecord> {
    return this.request("POST", "/api/sessions", { booking_id: bookingId });
  }

  joinSession(sessionId: string): Promise<JoinResult> {
    return this.request("POST", `/api/sessions/${sessionId}/join`);
  }

  endSession(sessionId: string): Promise<SessionRecord> {
    return this.request("DELETE", `/api/sessions/${sessionId}`);
  }

  descriptor(sessionId: string, participantToken: string): Promise<SessionDescriptor> {
    return this.request("GET", `/api/sessions/${sessionId}/descriptor`, undefined, {
      "X-Participant-Token": participantToken,
    });
  }

  postChat(groupId: string, body: string): Promise<ChatMessage> {
    return this.request("POST", `/api/groups/${groupId}/chat`, { body });
  }

  chatHistory(groupId: string, after = 0, limit = 100): Promise<{ messages: ChatMessage[] }> {
    return this.request("GET", `/api/groups/${groupId}/chat?after=${after}&limit=${limit}`);
  }

  listChannels(setupId: string): Promise<{ channels: ChannelInfo[] }> {
    return this.request("GET", `/api/setups/${setupId}/channels`);
  }

  readChannel(
    channelId: string,
    participantToken: string,
  ): Promise<{ channel_id: string; value: number | boolean; at: string }> {
    return this.request("GET", `/api/channels/${channelId}/read`, undefined, {
      "X-Participant-Token": participantToken,
    });
  }

  writeChannel(
    channelId: string,
    participantToken: string,
    value: number | boolean,
  ): Promise<{ channel_id: string; value: number | boolean }> {
    return this.request("POST", `/api/channels/${channelId}/write`, {
      participant_token: participantToken,
      value,
    });
  }

  health(): Promise<{ ok: boolean; seq: number }> {
    return this.request("GET", "/api/health");
  }

  status(): Promise<StatusReport> {
    return this.request("GET", "/api/status");
  }

  debugDesktop(sessionId: string): Promise<DesktopDebug> {
    return this.request("GET", `/api/debug/desktop/${sessionId}`);
  }

  /** ws:// or wss:// URL for a gateway socket path, token attached. */
  socketUrl(path: string, token: string): string {
    const base = this.baseUrl || (typeof location !== "undefined" ? location.origin : "");
    const ws = base.replace(/^http/, "ws");
    return `${ws}${path}?token=${encodeURIComponent(token)}`;
  }

  cameraUrl(path: string, participantToken: string, frames?: number): string {
    const q = new URLSearchParams({ token: participantToken });
    if (frames !== undefined) q.set("frames", String(frames));
    return `${this.baseUrl}${path}?${q}`;
  }
}
