/**
 * Binding parity suite: every fixture was produced by the core CLI on
 * BAT1 files; the client must return bit-identical loss and gradient
 * blobs through the HTTP service, and service errors must surface as
 * typed exceptions carrying the core error codes.
 */

import { ChildProcess, spawn } from "node:child_process";
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  BandInfeasibleError,
  BatLatticeClient,
  BatLatticeError,
  Tensor,
  VERSION,
  decodeTensor,
  encodeTensor,
} from "../src/index.js";

const FIXTURES = join(__dirname, "..", "fixtures");
const PORT = 8731;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
const client = new BatLatticeClient(BASE);

interface Meta {
  id: number;
  kind: "rnnt" | "bat";
  labels: number[];
  starts?: number[];
  r_d?: number;
  r_u?: number;
}

const manifest: Meta[] = JSON.parse(
  readFileSync(join(FIXTURES, "manifest.json"), "utf8"),
);

function loadTensor(caseId: number, name: string): Tensor {
  const path = join(FIXTURES, `case_${String(caseId).padStart(2, "0")}`, name);
  return decodeTensor(new Uint8Array(readFileSync(path)));
}

function loadBytes(caseId: number, name: string): Buffer {
  return readFileSync(join(FIXTURES, `case_${String(caseId).padStart(2, "0")}`, name));
}

beforeAll(async () => {
  server = spawn("batlattice", ["serve", "--port", String(PORT)], {
    stdio: "ignore",
  });
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((r) => setTimeout(r, 200));
  }
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe("binding parity with the CLI", () => {
  for (const meta of manifest) {
    it(`case ${meta.id} (${meta.kind}) is bit-identical`, async () => {
      const labels = meta.labels;
      const result =
        meta.kind === "rnnt"
          ? await client.rnntLoss(loadTensor(meta.id, "lattice.bat1"), labels)
          : await client.batLoss(
              loadTensor(meta.id, "banded.bat1"),
              meta.starts!,
              labels,
              meta.r_d!,
              meta.r_u!,
            );
      expect(Buffer.from(encodeTensor(result.lossTensor))).toEqual(
        loadBytes(meta.id, "expected_loss.bat1"),
      );
      expect(Buffer.from(encodeTensor(result.grad))).toEqual(
        loadBytes(meta.id, "expected_grad.bat1"),
      );
      expect(result.loss).toBe((result.lossTensor.data as Float64Array)[0]);
    });
  }
});

describe("full-cover band equivalence through the binding", () => {
  it("a window covering every row reproduces the full loss", async () => {
    // full-cover: window of width U+1 starting at 0 on every frame
    const lattice = loadTensor(0, "lattice.bat1");
    const labels = manifest[0]!.labels;
    const [t] = lattice.dims;
    const full = await client.rnntLoss(lattice, labels);
    const banded = await client.batLoss(
      lattice,
      new Array(t).fill(0),
      labels,
      labels.length,
      labels.length,
    );
    expect(Buffer.from(encodeTensor(banded.lossTensor))).toEqual(
      Buffer.from(encodeTensor(full.lossTensor)),
    );
    expect(Buffer.from(encodeTensor(banded.grad))).toEqual(
      Buffer.from(encodeTensor(full.grad)),
    );
  });
});

describe("kernel helpers", () => {
  it("buildWindow matches the reference alignment example", async () => {
    const res = await client.buildWindow([1, 1, 1, 2, 2, 3, 3, 4, 4, 4], 4, 1, 1);
    expect(res.starts).toEqual([0, 0, 0, 1, 1, 1, 1, 1, 1, 1]);
    expect(res.width).toBe(4);
  });

  it("cifBoundary counts threshold crossings", async () => {
    const weights: Tensor = { dtype: "f64", dims: [3], data: new Float64Array([1, 1, 1]) };
    expect(await client.cifBoundary(weights)).toEqual([1, 2, 3]);
  });

  it("version matches the core service", async () => {
    expect(await client.version()).toBe(VERSION);
  });
});

describe("error mapping", () => {
  it("blank label maps to BadLabel", async () => {
    const lattice: Tensor = {
      dtype: "f64",
      dims: [2, 2, 2],
      data: new Float64Array(8).fill(Math.log(0.5)),
    };
    await expect(client.rnntLoss(lattice, [0])).rejects.toMatchObject({
      code: "BadLabel",
    });
  });

  it("label/lattice mismatch maps to DimMismatch", async () => {
    const lattice = loadTensor(0, "lattice.bat1");
    const tooMany = new Array(lattice.dims[1]! + 3).fill(1);
    await expect(client.rnntLoss(lattice, tooMany)).rejects.toMatchObject({
      code: expect.stringMatching(/DimMismatch|BadLabel/),
    });
  });

  it("infeasible window maps to BandInfeasibleError", async () => {
    await expect(client.buildWindow([3, 5], 5, 1, 1)).rejects.toBeInstanceOf(
      BandInfeasibleError,
    );
  });

  it("unreachable service maps to a typed error", async () => {
    const dead = new BatLatticeClient("http://127.0.0.1:1");
    await expect(dead.version()).rejects.toBeInstanceOf(BatLatticeError);
  });
});
