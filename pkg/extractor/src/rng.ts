/** Deterministic randomness for the reference backbones.
 *
 * Everything downstream depends on re-runs being byte-identical, so the
 * generator is a fixed splitmix64 over BigInt (exact integer arithmetic,
 * no engine-dependent state) and weights are derived from string seeds,
 * never from global state.
 */

const MASK64 = (1n << 64n) - 1n;

/** FNV-1a over the UTF-8 bytes; stable across runs and platforms. */
export function hashString(s: string): bigint {
  let h = 0xcbf29ce484222325n;
  for (const byte of Buffer.from(s, 'utf-8')) {
    h ^= BigInt(byte);
    h = (h * 0x100000001b3n) & MASK64;
  }
  return h;
}

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint | string) {
    this.state = (typeof seed === 'string' ? hashString(seed) : seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return (z ^ (z >> 31n)) & MASK64;
  }

  /** Uniform in [0, 1) with full 53-bit mantissa. */
  nextFloat(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  /** Standard normal via Box-Muller; two uniforms per draw, no cached spare. */
  nextGaussian(): number {
    const u1 = Math.max(this.nextFloat(), Number.MIN_VALUE);
    const u2 = this.nextFloat();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }

  fillGaussian(n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = this.nextGaussian();
    return out;
  }
}
