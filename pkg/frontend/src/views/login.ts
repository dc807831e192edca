/** Sign-in form.  Failures show one generic message; the gateway refuses
 * to distinguish unknown names from wrong secrets and so do we. */

import { ApiClient, ApiError } from "../api.js";
import { el } from "../dom.js";
import type { Store, Route } from "../store.js";

export function homeRouteFor(role: string): Route {
  switch (role) {
    case "teacher":
      return { name: "courses" };
    case "administrator":
      return { name: "admin" };
    default:
      return { name: "booking" };
  }
}

export function renderLogin(store: Store, api: ApiClient): HTMLElement {
  const error = el("p", { class: "error", role: "alert" });
  const name = el("input", { name: "display_name", autocomplete: "username" });
  const secret = el("input", { name: "secret", type: "password" });

  const submit = async (event: Event) => {
    event.preventDefault();
    error.textContent = "";
    try {
      const result = await api.login(name.value, secret.value);
      const me = await api.me();
      store.update((s) => {
        s.auth = { token: result.token, userId: result.user_id, role: result.role };
        s.me = me;
        s.loginError = null;
        s.route = homeRouteFor(result.role);
      });
    } catch (err) {
      const message =
        err instanceof ApiError && err.code === "InvalidCredentials"
          ? "Sign-in failed. Check your name and secret."
          : "Sign-in is unavailable right now.";
      store.update((s) => {
        s.loginError = message;
      });
      error.textContent = message;
    }
  };

  return el(
    "main",
    { class: "login" },
    el("h1", {}, "Remote Lab"),
    el(
      "form",
      { onsubmit: submit },
      el("label", {}, "Name", name),
      el("label", {}, "Secret", secret),
      el("button", { type: "submit" }, "Sign in"),
      error,
    ),
  );
}
