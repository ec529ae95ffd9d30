import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // The loop test spawns the Python service and drives a full
    // upload -> candidates -> commit cycle against the mock backends.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
