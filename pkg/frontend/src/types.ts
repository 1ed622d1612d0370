// Wire types mirroring the designdiff HTTP API (docs/http_api.md).

export interface FeatureSpec {
  name: string;
  kind: "continuous" | "categorical";
  range?: [number, number];
  categories?: string[];
  render_role: string;
}

export interface Schema {
  version: string;
  canvas_size: number;
  features: FeatureSpec[];
}

export interface DesignPayload {
  values: number[];
  mask?: boolean[];
}

export interface GraphNode {
  component_id: string;
  size: [number, number];
  position: [number, number];
}

export interface GraphPayload {
  nodes: GraphNode[];
  edges: [number, number][];
}

export interface AutocompleteResponse {
  config_hash: string;
  seed: number;
  candidates: { values: number[]; mask: boolean[] }[];
  clamped: number[];
}

export interface AssembleResponse {
  config_hash: string;
  composite: string; // base64 PNG
  masks: string[];
}

export interface GenerateSample {
  image: string; // base64 PNG
  readback: { values: number[]; mask: boolean[] };
}

export interface GenerateResponse {
  config_hash: string;
  seed: number;
  readback_source: string;
  samples: GenerateSample[];
}

export interface EvaluateResponse {
  config_hash: string;
  metrics: {
    ioc?: Record<string, number>;
    psnr?: number;
    ssim?: number;
    diversity?: number;
  };
  n_images: number;
}
