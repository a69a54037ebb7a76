import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // The service round-trip test builds the bundle and boots a real Python
    // process; give it room.
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
