export * from "./protocol.js";
export * from "./client.js";
export * from "./editor.js";
export * from "./chart.js";
export * from "./app.js";
