/**
 * Model loaders.
 *
 * A model maps (t, batch payload, dims) to a payload of identical length.
 * Built-in loaders cover protocol testing; the `module:` loader imports a
 * user-supplied ES module wrapping a real denoiser checkpoint, which is
 * how actual diffusion models are served.
 *
 * Loader manifest:
 *   zero              -> always predicts zero noise
 *   constant:<value>  -> fills the batch with one value
 *   scale:<factor>    -> returns factor * input (affine test model)
 *   module:<path>     -> dynamic import; default export is
 *                        (t, payload, dims) => Float32Array
 */

export interface TensorDims {
  batch: number;
  channels: number;
  height: number;
  width: number;
}

export type PredictFn = (
  t: number,
  payload: Float32Array,
  dims: TensorDims,
) => Float32Array | Promise<Float32Array>;

export interface Model {
  readonly spec: string;
  predict: PredictFn;
}

export async function loadModel(spec: string): Promise<Model> {
  const [kind, ...rest] = spec.split(":");
  const arg = rest.join(":");
  switch (kind) {
    case "zero":
      return {
        spec,
        predict: (_t, payload) => new Float32Array(payload.length),
      };
    case "constant": {
      const value = arg === "" ? 0 : Number(arg);
      if (!Number.isFinite(value)) {
        throw new Error(`constant model needs a finite value, got '${arg}'`);
      }
      return {
        spec,
        predict: (_t, payload) => new Float32Array(payload.length).fill(value),
      };
    }
    case "scale": {
      const factor = arg === "" ? 1 : Number(arg);
      if (!Number.isFinite(factor)) {
        throw new Error(`scale model needs a finite factor, got '${arg}'`);
      }
      return {
        spec,
        predict: (_t, payload) => {
          const out = new Float32Array(payload.length);
          for (let i = 0; i < payload.length; i++) out[i] = factor * payload[i];
          return out;
        },
      };
    }
    case "module": {
      if (!arg) throw new Error("module model needs a path");
      const imported = await import(arg);
      const fn: PredictFn | undefined = imported.default ?? imported.predict;
      if (typeof fn !== "function") {
        throw new Error(`module '${arg}' does not export a predict function`);
      }
      return { spec, predict: fn };
    }
    default:
      throw new Error(
        `unknown model spec '${spec}' (expected zero | constant:<v> | scale:<k> | module:<path>)`,
      );
  }
}
