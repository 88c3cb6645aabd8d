import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["test/**/*.test.ts"],
    // the loopback test boots the Python service and waits on a real
    // approach phase, so give it room
    testTimeout: 60_000,
    hookTimeout: 30_000,
  },
});
