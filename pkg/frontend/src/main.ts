import { ConsoleApp } from "./console.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? `${window.location.hostname}:7708`;
const socket = new WebSocket(`ws://${server}/ws`);

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app element");
new ConsoleApp(root, socket);
