import { ApiClient } from "./api.js";
import { Workbench } from "./ui.js";

// Served from the render service's /ui path, so same-origin API calls;
// set window.PBRFLOW_SERVICE to point elsewhere when hosted standalone.
declare global {
	interface Window {
		PBRFLOW_SERVICE?: string;
	}
}

const base = window.PBRFLOW_SERVICE ?? "";
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");
new Workbench(new ApiClient(base), root);
