/** Landing pages for staff roles.  Students land on the calendar instead. */

import { ApiClient, ApiError } from "../api.js";
import { clear, el } from "../dom.js";
import type { Store } from "../store.js";

export function renderCourses(store: Store, api: ApiClient): HTMLElement {
  const state = store.getState();
  const notice = el("p", { class: "notice" });
  const list = el("ul", {});
  for (const course of state.me?.courses ?? []) {
    list.append(el("li", {}, `${course.title} (${course.id})`));
  }

  const title = el("input", { name: "title" });
  const create = async (event: Event) => {
    event.preventDefault();
    try {
      await api.createCourse(title.value);
      const me = await api.me();
      store.update((s) => {
        s.me = me;
      });
      clear(list);
      for (const course of me.courses) {
        list.append(el("li", {}, `${course.title} (${course.id})`));
      }
    } catch (err) {
      notice.textContent = err instanceof ApiError ? err.message : "create failed";
    }
  };

  return el(
    "main",
    { class: "courses" },
    el("h1", {}, "Your courses"),
    list,
    el("form", { onsubmit: create }, el("label", {}, "New course", title), el("button", { type: "submit" }, "create")),
    notice,
    el(
      "p",
      {},
      el(
        "button",
        {
          onclick: () =>
            store.update((s) => {
              s.route = { name: "booking" };
            }),
        },
        "open booking calendar",
      ),
    ),
  );
}

export function renderAdmin(store: Store, api: ApiClient): HTMLElement {
  const setupList = el("ul", {});
  const statusPre = el("pre", { class: "status-dump" });

  void api.listSetups().then(({ setups }) => {
    for (const setup of setups) {
      setupList.append(
        el(
          "li",
          {},
          `${setup.name} (${setup.id}): ${setup.channels.length} channels, ` +
            (setup.enabled ? "enabled" : "disabled"),
        ),
      );
    }
  });
  void api
    .status()
    .then((report) => {
      statusPre.textContent = JSON.stringify(report, null, 2);
    })
    .catch(() => {
      statusPre.textContent = "status unavailable";
    });

  return el(
    "main",
    { class: "admin" },
    el("h1", {}, "Platform"),
    el("h2", {}, "Setups"),
    setupList,
    el("h2", {}, "Status"),
    statusPre,
    el(
      "p",
      {},
      el(
        "button",
        {
          onclick: () =>
            store.update((s) => {
              s.route = { name: "booking" };
            }),
        },
        "open booking calendar",
      ),
    ),
  );
}
