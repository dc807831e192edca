/** Event socket consumer.  JSON text messages from /ws/events are parsed
 * and handed to a single callback; the caller funnels them into the store. */

import type { SocketLike } from "./relay.js";
import type { GatewayEvent } from "./store.js";

export interface EventHandlers {
  onEvent: (event: GatewayEvent) => void;
  onStatus?: (connected: boolean) => void;
}

export class EventStream {
  private openFlag = false;

  constructor(
    private readonly socket: SocketLike,
    handlers: EventHandlers,
  ) {
    socket.onopen = () => {
      this.openFlag = true;
      handlers.onStatus?.(true);
    };
    socket.onclose = () => {
      this.openFlag = false;
      handlers.onStatus?.(false);
    };
    socket.onerror = () => {
      handlers.onStatus?.(false);
    };
    socket.onmessage = (event) => {
      if (typeof event.data !== "string") {
        return;
      }
      let parsed: unknown;
      try {
        parsed = JSON.parse(event.data);
      } catch {
        return;
      }
      if (parsed && typeof parsed === "object" && "type" in parsed) {
        handlers.onEvent(parsed as GatewayEvent);
      }
    };
  }

  isOpen(): boolean {
    return this.openFlag;
  }

  close(): void {
    this.openFlag = false;
    this.socket.close(1000, "leaving");
  }
}
