/**
 * errors.ts: typed exceptions mirroring the core library's error codes.
 *
 * Every failure surfaced by the kernels carries a stable string code
 * (BadMagic, BadLabel, DimMismatch, BandInfeasible, ...). The HTTP
 * service forwards them verbatim; the client rethrows them as
 * BatLatticeError so callers can switch on `code` instead of parsing
 * messages. BandInfeasible gets its own subclass because callers
 * typically handle it (widen the band) rather than treat it as a bug.
 */

export class BatLatticeError extends Error {
  readonly code: string;

  constructor(code: string, message: string) {
    super(message);
    this.name = "BatLatticeError";
    this.code = code;
  }
}

export class BandInfeasibleError extends BatLatticeError {
  constructor(message: string) {
    super("BandInfeasible", message);
    this.name = "BandInfeasibleError";
  }
}

/** Rebuild the right error class from a service error body. */
export function errorFromBody(code: string, message: string): BatLatticeError {
  if (code === "BandInfeasible") return new BandInfeasibleError(message);
  return new BatLatticeError(code, message);
}
