import fs from "node:fs";
import Papa from "papaparse";
import { z } from "zod";

export const SWEEP_COLUMNS = [
  "scheme",
  "n",
  "K",
  "M",
  "estimate",
  "stderr",
  "benchmark",
  "error",
] as const;

export const SUP_COLUMNS = [
  "scheme",
  "n",
  "M",
  "sup_error",
  "stderr",
  "K",
  "benchmark_stderr",
] as const;

const sweepRowSchema = z.object({
  scheme: z.string().min(1),
  n: z.coerce.number().int().positive(),
  K: z.coerce.number(),
  M: z.coerce.number().int(),
  estimate: z.coerce.number(),
  stderr: z.coerce.number(),
  benchmark: z.coerce.number(),
  error: z.coerce.number(),
});

const supRowSchema = z.object({
  scheme: z.string().min(1),
  n: z.coerce.number().int().positive(),
  M: z.coerce.number().int(),
  sup_error: z.coerce.number(),
  stderr: z.coerce.number(),
  K: z.coerce.number(),
  benchmark_stderr: z.coerce.number(),
});

export type SweepRow = z.infer<typeof sweepRowSchema>;
export type SupRow = z.infer<typeof supRowSchema>;

function parseRows(
  text: string,
  source: string,
  columns: readonly string[],
): Record<string, string>[] {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`${source}: CSV parse error at row ${first.row}: ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const column of columns) {
    if (!fields.includes(column)) {
      throw new Error(
        `${source}: missing column "${column}"; expected header ${columns.join(",")}`,
      );
    }
  }
  if (parsed.data.length === 0) {
    throw new Error(`${source}: no data rows`);
  }
  return parsed.data;
}

export function parseSweepCsv(text: string, source = "<sweep csv>"): SweepRow[] {
  return parseRows(text, source, SWEEP_COLUMNS).map((r) => sweepRowSchema.parse(r));
}

export function parseSupCsv(text: string, source = "<summary csv>"): SupRow[] {
  return parseRows(text, source, SUP_COLUMNS).map((r) => supRowSchema.parse(r));
}

export function readSweepCsv(path: string): SweepRow[] {
  return parseSweepCsv(fs.readFileSync(path, "utf-8"), path);
}

export function readSupCsv(path: string): SupRow[] {
  return parseSupCsv(fs.readFileSync(path, "utf-8"), path);
}
