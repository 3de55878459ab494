/**
 * Constrained generation: the model may only emit candidate ids present in
 * the prefix tree, so every generation resolves to a real node.
 *
 * The tree stores tokens from the id-producing pipeline.  Before decoding,
 * each candidate's id string is re-tokenized with the model tokenizer and
 * the constraint tree is rebuilt over those tokens, so generation always
 * works at the granularity the model was trained on.
 */
import { TinyGraphLM, tokenize } from "./model.js";
import { Candidate, Trie, enumerateCandidates } from "./trie.js";

export interface GenerationResult {
  nodeId: string;
  tokens: string[];
  text: string;
}

interface ConstraintNode {
  terminal: Candidate | null;
  children: Map<string, ConstraintNode>;
}

/** Rebuild the candidate set as a tree over model-tokenizer tokens. */
export function constraintTree(trie: Trie): ConstraintNode {
  const root: ConstraintNode = { terminal: null, children: new Map() };
  for (const candidate of enumerateCandidates(trie)) {
    const tokens = tokenize(candidate.text);
    if (tokens.length === 0) {
      throw new RangeError(`candidate "${candidate.nodeId}" re-tokenizes to nothing`);
    }
    let node = root;
    for (const token of tokens) {
      let child = node.children.get(token);
      if (child === undefined) {
        child = { terminal: null, children: new Map() };
        node.children.set(token, child);
      }
      node = child;
    }
    node.terminal = candidate;
  }
  return root;
}

/**
 * Greedy decode under the tree constraint.  At every step only tokens that
 * extend some candidate are scoreable; ties break toward the smaller token
 * so generation is deterministic.  Always terminates at a candidate.
 */
export function constrainedGenerate(
  model: TinyGraphLM,
  trie: Trie,
  instruction: string
): GenerationResult {
  const score = model.nextTokenScorer(instruction);
  let node = constraintTree(trie);
  const emitted: string[] = [];
  while (node.terminal === null) {
    if (node.children.size === 0) {
      // Unreachable for prefix-free candidate sets; guard against bad input.
      throw new RangeError("constraint walk ended on a non-terminal node");
    }
    let bestToken: string | null = null;
    let bestScore = -Infinity;
    for (const token of [...node.children.keys()].sort()) {
      const s = score(emitted, token);
      if (s > bestScore) {
        bestScore = s;
        bestToken = token;
      }
    }
    emitted.push(bestToken!);
    node = node.children.get(bestToken!)!;
  }
  const candidate = node.terminal;
  return { nodeId: candidate.nodeId, tokens: emitted, text: candidate.text };
}
