/**
 * Reader for the instruction corpus interchange format.
 *
 * The corpus is a JSONL file where every line is an object with exactly
 * the keys produced by the pipeline's corpus assembler:
 *   instruction  free-text task prompt
 *   output       the target completion (a language-based node id or label)
 *   task         task family tag, e.g. "generative_lp"
 *   graph        source graph id
 *   center       center node id within that graph
 *   variant      prompt template variant index
 *
 * This module (like the rest of the trainer) never touches graph files;
 * the corpus and the binary prefix tree are its whole input surface.
 */
import fs from "fs";

import { CorpusFormatError } from "./errors.js";

export interface CorpusRecord {
  instruction: string;
  output: string;
  task: string;
  graph: string;
  center: string;
  variant: number;
}

const STRING_KEYS = ["instruction", "output", "task", "graph", "center"] as const;

function parseRecord(line: string, lineNo: number): CorpusRecord {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new CorpusFormatError(`line ${lineNo}: not valid JSON (${err})`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new CorpusFormatError(`line ${lineNo}: record must be an object`);
  }
  const record = raw as Record<string, unknown>;
  for (const key of STRING_KEYS) {
    if (typeof record[key] !== "string" || record[key] === "") {
      throw new CorpusFormatError(
        `line ${lineNo}: missing or empty field "${key}"`
      );
    }
  }
  if (typeof record.variant !== "number" || !Number.isInteger(record.variant)) {
    throw new CorpusFormatError(`line ${lineNo}: "variant" must be an integer`);
  }
  return {
    instruction: record.instruction as string,
    output: record.output as string,
    task: record.task as string,
    graph: record.graph as string,
    center: record.center as string,
    variant: record.variant,
  };
}

/** Load a corpus file; blank lines are ignored, an empty corpus is an error. */
export function loadCorpus(path: string): CorpusRecord[] {
  let text: string;
  try {
    text = fs.readFileSync(path, "utf-8");
  } catch (err) {
    throw new CorpusFormatError(`cannot read corpus at ${path}: ${err}`);
  }
  const records: CorpusRecord[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!;
    if (line.trim() === "") continue;
    records.push(parseRecord(line, i + 1));
  }
  if (records.length === 0) {
    throw new CorpusFormatError(`corpus at ${path} holds no records`);
  }
  return records;
}
