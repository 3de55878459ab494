/**
 * A deliberately small next-token model for corpus fine-tuning smoke runs.
 *
 * The model is log-linear: the logit of the next target token is a sum of
 * per-instruction-token weights (bag of words), a previous-token weight and
 * a bias.  That is enough capacity to memorize an instruction corpus whose
 * targets are determined by the instruction wording, trains in seconds with
 * plain Adam, and needs no native or GPU dependencies.
 *
 * Loss is computed on target tokens only; instruction tokens are features,
 * never prediction targets.
 */
import fs from "fs";
import path from "path";

import { CorpusRecord, loadCorpus } from "./corpus.js";
import { ModelLoadError } from "./errors.js";
import { readTrie } from "./trie.js";

/** Must match the id-producing pipeline so ids re-tokenize losslessly. */
export const TOKENIZER_ID = "simple-v1";

const TOKEN_PATTERN = /#?[a-z0-9_]+/g;

export function tokenize(text: string): string[] {
  return text.toLowerCase().match(TOKEN_PATTERN) ?? [];
}

const BOS = "<bos>";
const EOS = "<eos>";
const CHECKPOINT_FORMAT = "textgnn-trainer-checkpoint";

export interface TrainSpec {
  corpusPath: string;
  /** Checked against the model tokenizer when given; not read for training. */
  triePath?: string;
  outDir?: string;
  epochs: number;
  learningRate?: number;
  batchSize?: number;
  seed?: number;
}

export interface RunManifest {
  epochs: number;
  learningRate: number;
  batchSize: number;
  seed: number;
  records: number;
  vocabSize: number;
  tokenizerId: string;
}

export interface TrainResult {
  model: TinyGraphLM;
  /** Mean negative log-likelihood per target token, one entry per epoch. */
  lossCurve: number[];
  manifest: RunManifest;
}

/** Deterministic 32-bit PRNG (mulberry32) for shuffling batches. */
function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class TinyGraphLM {
  readonly tokenizerId = TOKENIZER_ID;
  readonly vocab: string[];
  private readonly index = new Map<string, number>();
  readonly wInst: Float64Array;
  readonly wPrev: Float64Array;
  readonly bias: Float64Array;

  constructor(vocab: string[]) {
    this.vocab = [...vocab];
    this.vocab.forEach((token, i) => this.index.set(token, i));
    if (!this.index.has(BOS) || !this.index.has(EOS)) {
      throw new ModelLoadError("vocabulary must include <bos> and <eos>");
    }
    const v = this.vocab.length;
    this.wInst = new Float64Array(v * v);
    this.wPrev = new Float64Array(v * v);
    this.bias = new Float64Array(v);
  }

  get vocabSize(): number {
    return this.vocab.length;
  }

  tokenId(token: string): number | undefined {
    return this.index.get(token);
  }

  get bosId(): number {
    return this.index.get(BOS)!;
  }

  get eosId(): number {
    return this.index.get(EOS)!;
  }

  /** Sparse bag-of-words feature counts for an instruction. */
  featurize(instruction: string): Map<number, number> {
    const counts = new Map<number, number>();
    for (const token of tokenize(instruction)) {
      const id = this.index.get(token);
      if (id === undefined) continue; // unseen words carry no signal
      counts.set(id, (counts.get(id) ?? 0) + 1);
    }
    return counts;
  }

  /** Raw next-token logits given instruction features and previous token. */
  logits(features: Map<number, number>, prevId: number): Float64Array {
    const v = this.vocabSize;
    const out = new Float64Array(v);
    out.set(this.bias);
    for (const [feat, count] of features) {
      const row = feat * v;
      for (let o = 0; o < v; o++) out[o]! += count * this.wInst[row + o]!;
    }
    const prevRow = prevId * v;
    for (let o = 0; o < v; o++) out[o]! += this.wPrev[prevRow + o]!;
    return out;
  }

  /**
   * Scoring closure for constrained generation: additive log-probabilities,
   * with tokens outside the model vocabulary pushed below everything known.
   */
  nextTokenScorer(instruction: string): (prev: string[], token: string) => number {
    const features = this.featurize(instruction);
    const cache = new Map<string, Float64Array>();
    return (prev, token) => {
      const id = this.index.get(token);
      if (id === undefined) return -1e30;
      const prevToken = prev.length ? prev[prev.length - 1]! : BOS;
      const prevId = this.index.get(prevToken) ?? this.bosId;
      let row = cache.get(prevToken);
      if (row === undefined) {
        row = logSoftmax(this.logits(features, prevId));
        cache.set(prevToken, row);
      }
      return row[id]!;
    };
  }
}

function logSoftmax(logits: Float64Array): Float64Array {
  let max = -Infinity;
  for (const x of logits) if (x > max) max = x;
  let sum = 0;
  for (const x of logits) sum += Math.exp(x - max);
  const logZ = max + Math.log(sum);
  const out = new Float64Array(logits.length);
  for (let i = 0; i < logits.length; i++) out[i] = logits[i]! - logZ;
  return out;
}

function buildVocab(records: CorpusRecord[]): string[] {
  const seen = new Set<string>([BOS, EOS]);
  for (const record of records) {
    for (const token of tokenize(record.instruction)) seen.add(token);
    for (const token of tokenize(record.output)) seen.add(token);
  }
  return [...seen].sort();
}

interface Example {
  features: Map<number, number>;
  prevs: number[];
  targets: number[];
}

class Adam {
  private readonly m: Float64Array;
  private readonly v: Float64Array;
  private step = 0;

  constructor(
    size: number,
    private readonly lr: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8
  ) {
    this.m = new Float64Array(size);
    this.v = new Float64Array(size);
  }

  apply(params: Float64Array, grads: Float64Array): void {
    this.step++;
    const correct1 = 1 - Math.pow(this.beta1, this.step);
    const correct2 = 1 - Math.pow(this.beta2, this.step);
    for (let i = 0; i < params.length; i++) {
      const g = grads[i]!;
      this.m[i] = this.beta1 * this.m[i]! + (1 - this.beta1) * g;
      this.v[i] = this.beta2 * this.v[i]! + (1 - this.beta2) * g * g;
      const mHat = this.m[i]! / correct1;
      const vHat = this.v[i]! / correct2;
      params[i]! -= (this.lr * mHat) / (Math.sqrt(vHat) + this.eps);
    }
  }
}

/**
 * Fine-tune a fresh model on a corpus.  Hyperparameter defaults (Adam,
 * learning rate 3e-4, batch size 4) are recorded in the run manifest.
 * When `outDir` is set, a checkpoint and a metrics file are written there.
 */
export function fineTune(spec: TrainSpec): TrainResult {
  if (!Number.isInteger(spec.epochs) || spec.epochs < 1) {
    throw new RangeError(`epochs must be a positive integer, got ${spec.epochs}`);
  }
  const learningRate = spec.learningRate ?? 3e-4;
  const batchSize = spec.batchSize ?? 4;
  const seed = spec.seed ?? 0;
  if (learningRate <= 0) throw new RangeError("learningRate must be positive");
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new RangeError("batchSize must be a positive integer");
  }

  const records = loadCorpus(spec.corpusPath);
  if (spec.triePath !== undefined) {
    readTrie(spec.triePath, TOKENIZER_ID); // fail fast on tokenizer drift
  }

  const model = new TinyGraphLM(buildVocab(records));
  const v = model.vocabSize;
  const examples: Example[] = records.map((record) => {
    const targetIds = tokenize(record.output).map((t) => model.tokenId(t)!);
    targetIds.push(model.eosId);
    return {
      features: model.featurize(record.instruction),
      prevs: [model.bosId, ...targetIds.slice(0, -1)],
      targets: targetIds,
    };
  });

  const optInst = new Adam(v * v, learningRate);
  const optPrev = new Adam(v * v, learningRate);
  const optBias = new Adam(v, learningRate);
  const gInst = new Float64Array(v * v);
  const gPrev = new Float64Array(v * v);
  const gBias = new Float64Array(v);

  const rng = makeRng(seed);
  const order = examples.map((_, i) => i);
  const lossCurve: number[] = [];

  for (let epoch = 0; epoch < spec.epochs; epoch++) {
    // Fisher-Yates shuffle of the example order.
    for (let i = order.length - 1; i > 0; i--) {
      const j = Math.floor(rng() * (i + 1));
      [order[i], order[j]] = [order[j]!, order[i]!];
    }
    let epochLoss = 0;
    let epochTokens = 0;
    for (let start = 0; start < order.length; start += batchSize) {
      const batch = order.slice(start, start + batchSize);
      gInst.fill(0);
      gPrev.fill(0);
      gBias.fill(0);
      let batchTokens = 0;
      for (const exampleIndex of batch) {
        const example = examples[exampleIndex]!;
        for (let t = 0; t < example.targets.length; t++) {
          const target = example.targets[t]!;
          const prev = example.prevs[t]!;
          const logProbs = logSoftmax(model.logits(example.features, prev));
          epochLoss -= logProbs[target]!;
          batchTokens++;
          for (let o = 0; o < v; o++) {
            const g = Math.exp(logProbs[o]!) - (o === target ? 1 : 0);
            gBias[o]! += g;
            gPrev[prev * v + o]! += g;
            for (const [feat, count] of example.features) {
              gInst[feat * v + o]! += count * g;
            }
          }
        }
      }
      epochTokens += batchTokens;
      const scale = 1 / batchTokens;
      for (let i = 0; i < gBias.length; i++) gBias[i]! *= scale;
      for (let i = 0; i < gInst.length; i++) {
        gInst[i]! *= scale;
        gPrev[i]! *= scale;
      }
      optInst.apply(model.wInst, gInst);
      optPrev.apply(model.wPrev, gPrev);
      optBias.apply(model.bias, gBias);
    }
    lossCurve.push(epochLoss / epochTokens);
  }

  const manifest: RunManifest = {
    epochs: spec.epochs,
    learningRate,
    batchSize,
    seed,
    records: records.length,
    vocabSize: v,
    tokenizerId: TOKENIZER_ID,
  };

  if (spec.outDir !== undefined) {
    fs.mkdirSync(spec.outDir, { recursive: true });
    saveCheckpoint(model, manifest, path.join(spec.outDir, "checkpoint.json"));
    fs.writeFileSync(
      path.join(spec.outDir, "metrics.json"),
      JSON.stringify({ lossCurve, manifest }, null, 2) + "\n"
    );
  }

  return { model, lossCurve, manifest };
}

export function saveCheckpoint(
  model: TinyGraphLM,
  manifest: RunManifest,
  filePath: string
): void {
  const payload = {
    format: CHECKPOINT_FORMAT,
    version: 1,
    tokenizerId: model.tokenizerId,
    vocab: model.vocab,
    wInst: [...model.wInst],
    wPrev: [...model.wPrev],
    bias: [...model.bias],
    manifest,
  };
  fs.writeFileSync(filePath, JSON.stringify(payload) + "\n");
}

export function loadCheckpoint(filePath: string): TinyGraphLM {
  let raw: unknown;
  try {
    raw = JSON.parse(fs.readFileSync(filePath, "utf-8"));
  } catch (err) {
    throw new ModelLoadError(`cannot read checkpoint at ${filePath}: ${err}`);
  }
  const data = raw as Record<string, unknown>;
  if (data.format !== CHECKPOINT_FORMAT || data.version !== 1) {
    throw new ModelLoadError(`${filePath} is not a version-1 checkpoint`);
  }
  if (!Array.isArray(data.vocab)) {
    throw new ModelLoadError(`${filePath} has no vocabulary`);
  }
  const model = new TinyGraphLM(data.vocab as string[]);
  const v = model.vocabSize;
  for (const [key, expected, into] of [
    ["wInst", v * v, model.wInst],
    ["wPrev", v * v, model.wPrev],
    ["bias", v, model.bias],
  ] as const) {
    const values = data[key];
    if (!Array.isArray(values) || values.length !== expected) {
      throw new ModelLoadError(`${filePath}: bad "${key}" shape`);
    }
    into.set(values as number[]);
  }
  return model;
}
