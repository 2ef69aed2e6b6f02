import { ApiClient } from "./api.js";
import { TriageController } from "./controller.js";
import { TriageView } from "./view.js";

const params = new URLSearchParams(window.location.search);
const reviewer = params.get("reviewer") ?? window.prompt("Reviewer name?", "anonymous") ?? "anonymous";

const api = new ApiClient("");
const controller = new TriageController(api, { reviewer });
new TriageView(api, controller);

void controller.start();
window.setInterval(() => void controller.refreshStats().catch(() => undefined), 3000);
