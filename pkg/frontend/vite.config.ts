/// <reference types="vitest/config" />
import { defineConfig } from "vite";

export default defineConfig({
  build: {
    target: "es2020",
  },
  test: {
    environment: "node",
    include: ["test/**/*.test.ts"],
    // The live suite paces a knob sweep against a real server.
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
