import { defineConfig } from "vitest/config";

// During development the gateway runs separately; proxy every API path so
// the portal can keep using same-origin URLs.
const gateway = process.env.ZTPOM_GATEWAY_URL ?? "http://127.0.0.1:8420";

const apiPaths = [
  "/blueprints",
  "/deployments",
  "/agent",
  "/catalogue",
  "/trust",
  "/topology",
  "/sim",
  "/events",
  "/tick",
];

export default defineConfig({
  server: {
    proxy: Object.fromEntries(apiPaths.map((p) => [p, { target: gateway, changeOrigin: true }])),
  },
  test: {
    environment: "jsdom",
  },
});
