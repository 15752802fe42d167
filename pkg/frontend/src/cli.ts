#!/usr/bin/env node
/**
 * plot <kind> --in <csv> [--in <csv>...] --out <file.svg> [--n N]
 *
 * kinds:
 *   error-vs-strike      reads sweep CSVs (scheme,n,K,M,estimate,stderr,benchmark,error)
 *   loglog-convergence   reads sup-error summary CSVs (scheme,n,M,sup_error,stderr,K,benchmark_stderr)
 *
 * The output file is written only after the figure renders, so a schema or
 * data error never leaves an empty image behind.
 */
import fs from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { readSupCsv, readSweepCsv } from "./csv.js";
import { renderConvergence, renderErrorVsStrike, type FigureKind } from "./figures.js";

export function renderFigure(
  kind: FigureKind,
  inputs: string[],
  nFilter?: number,
  title?: string,
): string {
  if (kind === "error-vs-strike") {
    const rows = inputs.flatMap((p) => readSweepCsv(p));
    return renderErrorVsStrike(rows, { nFilter, title });
  }
  const rows = inputs.flatMap((p) => readSupCsv(p));
  return renderConvergence(rows, { title });
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("sdeweak-plot")
    .command("$0 <kind>", "render a figure from sweep CSVs", (cmd) =>
      cmd.positional("kind", {
        choices: ["error-vs-strike", "loglog-convergence"] as const,
        describe: "figure kind",
      }),
    )
    .option("in", {
      type: "string",
      array: true,
      demandOption: true,
      describe: "input CSV path (repeatable)",
    })
    .option("out", { type: "string", demandOption: true, describe: "output SVG path" })
    .option("n", { type: "number", describe: "step-count filter for error-vs-strike" })
    .option("title", { type: "string", describe: "figure title override" })
    .strict()
    .fail((msg, err) => {
      throw err ?? new Error(msg);
    })
    .parse();

  const out = args.out as string;
  if (!out.endsWith(".svg")) {
    throw new Error(`output must be an .svg path (got ${out}); PNG is not supported`);
  }
  const svg = renderFigure(
    args.kind as FigureKind,
    args.in as string[],
    args.n as number | undefined,
    args.title as string | undefined,
  );
  fs.writeFileSync(out, svg + "\n", "utf-8");
  process.stderr.write(`wrote ${out}\n`);
  return 0;
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url === `file://${process.argv[1]}`;
if (isDirectRun) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((err) => {
      process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
      process.exit(1);
    });
}
