import { SessionStore } from "./store.js";
import { mount } from "./view.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const store = new SessionStore();
mount(root, store);
store.loadProjects().catch((err) => {
  root.textContent = `Could not load projects: ${String(err)}`;
});
