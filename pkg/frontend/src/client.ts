/**
 * client.ts: array-based bindings over the batlattice HTTP service.
 *
 * Float tensors travel as base64 "BAT1" blobs in both directions, so
 * the loss and gradient values returned here are bit-identical to what
 * the core kernels produced; integer sequences travel as JSON lists.
 *
 * The four entry points mirror the core kernel surface:
 *   rnntLoss(logProbs, labels)                 full-lattice loss + grad
 *   batLoss(bandedLogProbs, starts, labels, rd, ru)
 *   buildWindow(boundary, u, rd, ru)           band window starts
 *   cifBoundary(weights, threshold?)           integrate-and-fire counts
 */

import { errorFromBody, BatLatticeError } from "./errors.js";
import { Tensor, tensorFromBase64, tensorToBase64 } from "./tensor.js";

export const VERSION = "0.1.0";

export interface LossResult {
  loss: number;
  /** f64 gradient with the same shape as the input lattice. */
  grad: Tensor;
  /** Loss as the raw 1-element f64 tensor the service produced. */
  lossTensor: Tensor;
  infeasible: boolean;
}

export interface WindowResult {
  starts: number[];
  width: number;
}

interface WireLossResponse {
  loss: number;
  loss_tensor: string;
  grad: string;
  infeasible: boolean;
}

export class BatLatticeClient {
  constructor(private readonly baseUrl: string) {}

  private async post<T>(route: string, payload: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl.replace(/\/$/, "") + route, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
    } catch (err) {
      throw new BatLatticeError("Unreachable", `service not reachable: ${err}`);
    }
    const body = (await resp.json()) as Record<string, unknown>;
    if (!resp.ok) {
      throw errorFromBody(
        String(body.code ?? "Error"),
        String(body.message ?? resp.statusText),
      );
    }
    return body as unknown as T;
  }

  async version(): Promise<string> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl.replace(/\/$/, "") + "/v1/version");
    } catch (err) {
      throw new BatLatticeError("Unreachable", `service not reachable: ${err}`);
    }
    const body = (await resp.json()) as { version: string };
    return body.version;
  }

  private static lossResult(body: WireLossResponse): LossResult {
    const lossTensor = tensorFromBase64(body.loss_tensor);
    return {
      loss: (lossTensor.data as Float64Array)[0]!,
      grad: tensorFromBase64(body.grad),
      lossTensor,
      infeasible: body.infeasible,
    };
  }

  /** Full-lattice transducer loss on a (T, U+1, V+1) log-prob tensor. */
  async rnntLoss(logProbs: Tensor, labels: number[]): Promise<LossResult> {
    const body = await this.post<WireLossResponse>("/v1/rnnt-loss", {
      log_probs: tensorToBase64(logProbs),
      labels,
    });
    return BatLatticeClient.lossResult(body);
  }

  /** Band-restricted loss on a (T, S, V+1) banded tensor. */
  async batLoss(
    bandedLogProbs: Tensor,
    windowStarts: number[],
    labels: number[],
    rD: number,
    rU: number,
  ): Promise<LossResult> {
    const body = await this.post<WireLossResponse>("/v1/bat-loss", {
      log_probs: tensorToBase64(bandedLogProbs),
      window_starts: windowStarts,
      labels,
      r_d: rD,
      r_u: rU,
    });
    return BatLatticeClient.lossResult(body);
  }

  /** Per-frame window starts from a boundary sequence. */
  async buildWindow(
    boundary: number[],
    u: number,
    rD: number,
    rU: number,
  ): Promise<WindowResult> {
    return this.post<WindowResult>("/v1/build-window", {
      boundary,
      u,
      r_d: rD,
      r_u: rU,
    });
  }

  /** Integrate-and-fire boundary counts for a (T,) weight tensor. */
  async cifBoundary(weights: Tensor, threshold = 1.0): Promise<number[]> {
    const body = await this.post<{ boundary: number[] }>("/v1/cif-boundary", {
      weights: tensorToBase64(weights),
      threshold,
    });
    return body.boundary;
  }
}
