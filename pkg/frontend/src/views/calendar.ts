/** Weekly booking calendar.
 *
 * One setup at a time, seven day columns, an hour row per distinct slot
 * hour.  The quota line keeps the group's remaining allowance in view and
 * booking failures surface as distinct, specific messages: a taken slot
 * is not a quota problem and the user should not have to guess which
 * happened.
 */

import { ApiClient, ApiError, Slot } from "../api.js";
import { clear, el } from "../dom.js";
import { calendarGrid, shiftWeek, Store, weekStartOf } from "../store.js";

const DAY_NAMES = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

export function noticeFor(err: unknown): string {
  if (err instanceof ApiError) {
    switch (err.code) {
      case "SlotTaken":
        return "That slot was just taken by another group.";
      case "QuotaExceeded":
        return "Your group has used its booking quota for this week.";
      case "PermissionDenied":
        return "You can only book for your own group.";
      default:
        return `Booking failed: ${err.message}`;
    }
  }
  return "Booking failed: network error.";
}

export function renderCalendar(store: Store, api: ApiClient): HTMLElement {
  const state = store.getState();
  const groupId = state.me?.groups[0]?.id ?? null;

  const notice = el("p", { class: "notice", role: "status" });
  const quotaLine = el("p", { class: "quota" });
  const grid = el("div", { class: "grid" });
  const bookingsList = el("ul", { class: "bookings" });
  const setupSelect = el("select", { name: "setup" });

  const refresh = async () => {
    const s = store.getState();
    const setupId = s.slotsSetupId ?? s.setups[0]?.id;
    if (!setupId) return;
    const weekStart = s.weekStart ?? weekStartOf(new Date());
    const weekEnd = shiftWeek(weekStart, 1);
    const [slots, quota, bookings] = await Promise.all([
      api.listSlots(setupId, weekStart, weekEnd),
      groupId ? api.quota(groupId) : Promise.resolve(null),
      groupId ? api.groupBookings(groupId) : Promise.resolve({ bookings: [] }),
    ]);
    store.update((st) => {
      st.slots = slots.slots;
      st.slotsSetupId = setupId;
      st.weekStart = weekStart;
      st.quota = quota;
      st.bookings = bookings.bookings;
    });
    paint();
  };

  const book = async (slot: Slot) => {
    if (!groupId) return;
    notice.textContent = "";
    try {
      await api.bookSlot(groupId, slot.id);
      store.update((st) => {
        st.bookingNotice = null;
      });
    } catch (err) {
      const message = noticeFor(err);
      store.update((st) => {
        st.bookingNotice = message;
      });
      notice.textContent = message;
    }
    await refresh();
  };

  const cancel = async (bookingId: string) => {
    try {
      await api.cancelBooking(bookingId);
    } catch (err) {
      notice.textContent = err instanceof ApiError ? err.message : "cancel failed";
    }
    await refresh();
  };

  const startAndEnter = async (bookingId: string) => {
    try {
      const record = await api.startSession(bookingId);
      store.update((st) => {
        st.route = { name: "session", sessionId: record.id };
      });
    } catch (err) {
      notice.textContent = err instanceof ApiError ? err.message : "start failed";
    }
  };

  const paint = () => {
    const s = store.getState();
    if (s.quota) {
      const cap = s.quota.limit === null ? "no limit" : `limit ${s.quota.limit}`;
      quotaLine.textContent =
        `Week ${s.quota.week}: ${s.quota.held} held, ${s.quota.remaining} remaining (${cap})`;
    } else {
      quotaLine.textContent = "No group membership; booking disabled.";
    }

    clear(grid);
    const weekStart = s.weekStart ?? weekStartOf(new Date());
    const cells = calendarGrid(s.slots, weekStart);
    const hours = [...new Set(cells.map((c) => c.hour))].sort((a, b) => a - b);
    const byKey = new Map(cells.map((c) => [`${c.day}:${c.hour}`, c] as const));

    const header = el("tr", {}, el("th", {}, "UTC"));
    DAY_NAMES.forEach((d) => header.append(el("th", {}, d)));
    const table = el("table", {}, el("thead", {}, header));
    const tbody = el("tbody", {});
    for (const hour of hours) {
      const row = el("tr", {}, el("th", {}, `${String(hour).padStart(2, "0")}:00`));
      for (let day = 0; day < 7; day++) {
        const cell = byKey.get(`${day}:${hour}`);
        if (!cell) {
          row.append(el("td", { class: "empty" }));
        } else if (cell.slot.available) {
          row.append(
            el(
              "td",
              { class: "open" },
              el("button", { onclick: () => void book(cell.slot) }, "book"),
            ),
          );
        } else {
          row.append(el("td", { class: "held" }, "held"));
        }
      }
      tbody.append(row);
    }
    table.append(tbody);
    grid.append(table);

    clear(bookingsList);
    for (const b of s.bookings.filter((b) => b.state === "active")) {
      const item = el(
        "li",
        {},
        `${b.slot.start} on ${b.slot.setup_id} `,
        el("button", { onclick: () => void startAndEnter(b.id) }, "start session"),
        " ",
        el("button", { onclick: () => void cancel(b.id) }, "cancel"),
      );
      if (b.session_id) {
        item.append(
          " ",
          el(
            "button",
            {
              onclick: () =>
                store.update((st) => {
                  st.route = { name: "session", sessionId: b.session_id as string };
                }),
            },
            "rejoin",
          ),
        );
      }
      bookingsList.append(item);
    }
  };

  const shift = (weeks: number) => {
    store.update((st) => {
      st.weekStart = shiftWeek(st.weekStart ?? weekStartOf(new Date()), weeks);
    });
    void refresh();
  };

  void api.listSetups().then(({ setups }) => {
    store.update((st) => {
      st.setups = setups;
    });
    clear(setupSelect);
    for (const setup of setups) {
      setupSelect.append(el("option", { value: setup.id }, setup.name));
    }
    void refresh();
  });
  setupSelect.addEventListener("change", () => {
    store.update((st) => {
      st.slotsSetupId = setupSelect.value;
    });
    void refresh();
  });

  return el(
    "main",
    { class: "calendar" },
    el("h1", {}, "Book a bench"),
    el(
      "p",
      {},
      setupSelect,
      el("button", { onclick: () => shift(-1) }, "previous week"),
      el("button", { onclick: () => shift(1) }, "next week"),
    ),
    quotaLine,
    notice,
    grid,
    el("h2", {}, "Your bookings"),
    bookingsList,
  );
}
