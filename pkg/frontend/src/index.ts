export { BatLatticeClient, VERSION } from "./client.js";
export type { LossResult, WindowResult } from "./client.js";
export { BatLatticeError, BandInfeasibleError } from "./errors.js";
export {
  decodeTensor,
  encodeTensor,
  tensorFromBase64,
  tensorToBase64,
} from "./tensor.js";
export type { Dtype, Tensor, TypedPayload } from "./tensor.js";
