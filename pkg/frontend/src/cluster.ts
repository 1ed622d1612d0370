// Clustering readout for the conflict view: given the gallery's readback
// values for one feature and the two competing targets, report where the
// generated designs land.

export interface ClusterSummary {
  median: number;
  mean: number;
  nearParametric: number;
  nearComponent: number;
  winner: "parametric" | "component" | "tie";
  histogram: { lo: number; hi: number; count: number }[];
}

export function median(values: number[]): number {
  if (values.length === 0) return NaN;
  const sorted = values.slice().sort((a, b) => a - b);
  const mid = Math.floor(sorted.length / 2);
  return sorted.length % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2;
}

export function clusterSummary(
  values: number[],
  parametricTarget: number,
  componentTarget: number,
  bins = 8,
): ClusterSummary {
  const med = median(values);
  const mean = values.reduce((s, v) => s + v, 0) / Math.max(values.length, 1);
  let nearParametric = 0;
  let nearComponent = 0;
  for (const v of values) {
    if (Math.abs(v - parametricTarget) < Math.abs(v - componentTarget)) nearParametric += 1;
    else if (Math.abs(v - componentTarget) < Math.abs(v - parametricTarget)) nearComponent += 1;
  }
  const dPar = Math.abs(med - parametricTarget);
  const dComp = Math.abs(med - componentTarget);
  const winner = dComp < dPar ? "component" : dPar < dComp ? "parametric" : "tie";

  const lo = Math.min(parametricTarget, componentTarget, ...values);
  const hi = Math.max(parametricTarget, componentTarget, ...values);
  const width = (hi - lo) / bins || 1;
  const histogram = Array.from({ length: bins }, (_, i) => ({
    lo: lo + i * width,
    hi: lo + (i + 1) * width,
    count: 0,
  }));
  for (const v of values) {
    const idx = Math.min(bins - 1, Math.floor((v - lo) / width));
    histogram[idx].count += 1;
  }
  return { median: med, mean, nearParametric, nearComponent, winner, histogram };
}
