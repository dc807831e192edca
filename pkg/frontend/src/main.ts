/** Dashboard entry point.
 *
 * One store, one API client, one mounted view at a time.  Views own the
 * connections they open and must release them in unmount(); the router
 * below guarantees unmount runs before the next view appears, which is
 * what keeps relay/event/camera connections from leaking.
 */

import { ApiClient } from "./api.js";
import { clear } from "./dom.js";
import { Route, Store } from "./store.js";
import { renderCalendar } from "./views/calendar.js";
import { renderAdmin, renderCourses } from "./views/home.js";
import { renderLogin } from "./views/login.js";
import { mountSession, SessionController } from "./views/session.js";

function routeKey(route: Route): string {
  return route.name === "session" ? `session:${route.sessionId}` : route.name;
}

export function boot(rootId = "app"): void {
  const root = document.getElementById(rootId);
  if (!root) {
    throw new Error(`missing #${rootId} element`);
  }
  const store = new Store();
  const api = new ApiClient("");

  let mountedKey = "";
  let controller: SessionController | null = null;

  const render = () => {
    const state = store.getState();
    const route = state.auth ? state.route : ({ name: "login" } as Route);
    const key = routeKey(route);
    if (key === mountedKey) {
      return;
    }
    if (controller) {
      controller.unmount();
      controller = null;
    }
    mountedKey = key;
    clear(root);
    switch (route.name) {
      case "login":
        root.append(renderLogin(store, api));
        break;
      case "booking":
        root.append(renderCalendar(store, api));
        break;
      case "courses":
        root.append(renderCourses(store, api));
        break;
      case "admin":
        root.append(renderAdmin(store, api));
        break;
      case "session":
        controller = mountSession(store, api, route.sessionId);
        root.append(controller.root);
        break;
    }
  };

  store.subscribe(render);
  render();
}

boot();
