/** Response shapes of the storetrace serve API. Times are integer ns. */

export interface TreeResponse {
  paths: string[];
  tree_start: number;
  tree_end: number;
}

export interface StateInterval {
  t0: number;
  t1: number;
  value: number | string | null;
}

export interface StatesResponse {
  path: string;
  t0: number;
  t1: number;
  intervals: StateInterval[];
}

export interface SeriesResponse {
  name: string;
  bucket_ns: number;
  origin: number;
  values: number[];
}

export interface Finding {
  kind: string;
  severity: "info" | "warn" | "critical";
  t0: number;
  t1: number;
  paths: string[];
  evidence: Record<string, number | string | number[]>;
  narrative: string;
}

export interface FlowSegment {
  host: string;
  tid: number;
  label: string;
  t0: number;
  t1: number;
  fd?: number;
  msg_id?: number;
}

export interface Flow {
  id: string;
  origin: string;
  command: string;
  complete: boolean;
  segments: FlowSegment[];
}

export interface FlowIndexEntry {
  id: string;
  complete: boolean;
  command: string;
}

export interface Span {
  id: number;
  kind: "client" | "server";
  service: string;
  host: string;
  key: [string, number, string, number];
  k: number;
  t0: number;
  t1: number | null;
  parent: number | null;
  fd: number | null;
}

export interface SpansResponse {
  spans: Span[];
  unmatched: number;
  flows: { id: string; parent_span: number }[];
}
