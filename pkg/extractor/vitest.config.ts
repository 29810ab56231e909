import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // The integration test trains a model through a spawned process.
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
