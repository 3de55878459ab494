/**
 * Command-line entry point.
 *
 * Usage (after `npm run build`):
 *   node dist/cli.js --corpus corpus.jsonl --trie ids.trie \
 *     --out runs/demo --epochs 100
 */
import { parseArgs } from "util";

import { loadCorpus } from "./corpus.js";
import { constrainedGenerate } from "./generate.js";
import { fineTune } from "./model.js";
import { readTrie } from "./trie.js";

function main(): void {
  const { values } = parseArgs({
    options: {
      corpus: { type: "string" },
      trie: { type: "string" },
      out: { type: "string" },
      epochs: { type: "string", default: "100" },
      lr: { type: "string" },
      "batch-size": { type: "string" },
      seed: { type: "string", default: "0" },
      sample: { type: "string", default: "3" },
    },
  });
  if (!values.corpus || !values.trie) {
    console.error("required: --corpus <jsonl> --trie <file> [--out <dir>]");
    process.exit(2);
  }

  const result = fineTune({
    corpusPath: values.corpus,
    triePath: values.trie,
    outDir: values.out,
    epochs: parseInt(values.epochs!, 10),
    learningRate: values.lr ? parseFloat(values.lr) : undefined,
    batchSize: values["batch-size"]
      ? parseInt(values["batch-size"], 10)
      : undefined,
    seed: parseInt(values.seed!, 10),
  });
  const first = result.lossCurve[0]!.toFixed(4);
  const last = result.lossCurve[result.lossCurve.length - 1]!.toFixed(4);
  console.log(
    `trained ${result.manifest.records} records for ` +
      `${result.manifest.epochs} epochs: loss ${first} -> ${last}`
  );

  const trie = readTrie(values.trie, result.model.tokenizerId);
  const sampleCount = parseInt(values.sample!, 10);
  const records = loadCorpus(values.corpus).slice(0, sampleCount);
  for (const record of records) {
    const generated = constrainedGenerate(result.model, trie, record.instruction);
    const mark = generated.text === record.output ? "ok " : "MISS";
    console.log(`  [${mark}] ${generated.text}  (wanted: ${record.output})`);
  }
}

main();
