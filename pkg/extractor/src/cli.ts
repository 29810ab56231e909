#!/usr/bin/env node
/** Command line: `extract --config cfg.json` for real datasets,
 * `fixtures --out dir` for the bundled integration dataset.
 * Exit codes: 0 success, 2 config/data/format problems.
 */

import { realpathSync } from 'node:fs';
import { pathToFileURL } from 'node:url';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { ExtractorError } from './errors.js';
import { ExtractionSummary, buildDataset, loadConfig, resolveConfig } from './extract.js';
import { fixtureConfig } from './fixturegen.js';

function report(summary: ExtractionSummary): void {
  const { written, skipped, meta } = summary;
  console.log(
    `wrote ${written.train} train / ${written.val} val records ` +
    `(d_ft ${meta.dFt}, d_txt ${meta.dTxt}, ${meta.nClasses} classes, ` +
    `${skipped.length} skipped)`);
  for (const path of summary.outputs) console.log(`  ${path}`);
}

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName('aag-extract')
      .strict()
      .demandCommand(1)
      .fail((msg, err) => {
        // Let real errors reach the catch below; usage problems become
        // a thrown ExtractorError for the same exit path.
        if (err) throw err;
        throw new ExtractorError(msg);
      })
      .command(
        'extract',
        'build AAGF/AAGC files from an annotated dataset',
        (y) => y
          .option('config', {
            type: 'string',
            demandOption: true,
            describe: 'extraction config JSON',
          })
          .option('out', {
            type: 'string',
            describe: 'override the output directory from the config',
          }),
        (args) => {
          let cfg = loadConfig(args.config);
          if (args.out) cfg = resolveConfig({ ...cfg, out: args.out });
          report(buildDataset(cfg));
        })
      .command(
        'fixtures',
        'extract the bundled fixture dataset (ten samples, four classes)',
        (y) => y.option('out', {
          type: 'string',
          demandOption: true,
          describe: 'output directory',
        }),
        (args) => {
          report(buildDataset(fixtureConfig(args.out)));
        })
      .parseAsync();
    return 0;
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return e instanceof ExtractorError ? 2 : 1;
  }
}

function isEntryPoint(): boolean {
  // argv[1] may be a bin symlink; compare resolved paths.
  const invoked = process.argv[1];
  if (!invoked) return false;
  try {
    return import.meta.url === pathToFileURL(realpathSync(invoked)).href;
  } catch {
    return false;
  }
}

if (isEntryPoint()) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
