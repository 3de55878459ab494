/**
 * Reader for the binary prefix-tree interchange format.
 *
 * Layout (all integers little-endian):
 *   magic        6 bytes  "TGTRIE"
 *   version      u8       currently 1
 *   tokenizer    u16 length + utf-8 bytes
 *   then the tree in preorder, one record per node:
 *     token      u16 length + utf-8 bytes (empty for the root)
 *     terminal   u8 flag; if 1, followed by u16 length + node-id bytes
 *     children   u16 count, then the child records in sorted token order
 */
import fs from "fs";

import { CorruptTrieError, TokenizerMismatch } from "./errors.js";

export interface TrieNode {
  token: string;
  /** Node id of the candidate ending here, if any. */
  terminal: string | null;
  children: Map<string, TrieNode>;
}

export interface Trie {
  tokenizerId: string;
  root: TrieNode;
  candidateCount: number;
}

const MAGIC = Buffer.from("TGTRIE", "ascii");

class Cursor {
  private offset = 0;

  constructor(private readonly buf: Buffer) {}

  private need(n: number): void {
    if (this.offset + n > this.buf.length) {
      throw new CorruptTrieError(
        `truncated file: wanted ${n} bytes at offset ${this.offset}`
      );
    }
  }

  u8(): number {
    this.need(1);
    return this.buf.readUInt8(this.offset++);
  }

  u16(): number {
    this.need(2);
    const value = this.buf.readUInt16LE(this.offset);
    this.offset += 2;
    return value;
  }

  str(): string {
    const length = this.u16();
    this.need(length);
    const value = this.buf.toString("utf-8", this.offset, this.offset + length);
    this.offset += length;
    return value;
  }

  bytes(n: number): Buffer {
    this.need(n);
    const value = this.buf.subarray(this.offset, this.offset + n);
    this.offset += n;
    return value;
  }

  exhausted(): boolean {
    return this.offset === this.buf.length;
  }
}

function readNode(cursor: Cursor, counter: { candidates: number }): TrieNode {
  const token = cursor.str();
  const flag = cursor.u8();
  if (flag !== 0 && flag !== 1) {
    throw new CorruptTrieError(`bad terminal flag ${flag}`);
  }
  const terminal = flag === 1 ? cursor.str() : null;
  if (terminal !== null) counter.candidates++;
  const childCount = cursor.u16();
  const children = new Map<string, TrieNode>();
  for (let i = 0; i < childCount; i++) {
    const child = readNode(cursor, counter);
    if (children.has(child.token)) {
      throw new CorruptTrieError(`duplicate child token "${child.token}"`);
    }
    children.set(child.token, child);
  }
  return { token, terminal, children };
}

/**
 * Parse a binary prefix tree.  When `expectedTokenizerId` is given, a file
 * written with a different tokenizer is rejected rather than silently
 * producing ids the model tokenizer cannot reproduce.
 */
export function readTrie(path: string, expectedTokenizerId?: string): Trie {
  const buf = fs.readFileSync(path);
  const cursor = new Cursor(buf);
  if (!cursor.bytes(MAGIC.length).equals(MAGIC)) {
    throw new CorruptTrieError(`${path} is not a prefix-tree file`);
  }
  const version = cursor.u8();
  if (version !== 1) {
    throw new CorruptTrieError(`unsupported format version ${version}`);
  }
  const tokenizerId = cursor.str();
  if (expectedTokenizerId !== undefined && tokenizerId !== expectedTokenizerId) {
    throw new TokenizerMismatch(
      `tree was built with "${tokenizerId}", expected "${expectedTokenizerId}"`
    );
  }
  const counter = { candidates: 0 };
  const root = readNode(cursor, counter);
  if (!cursor.exhausted()) {
    throw new CorruptTrieError(`trailing bytes after tree in ${path}`);
  }
  if (counter.candidates === 0) {
    throw new CorruptTrieError(`tree in ${path} holds no candidates`);
  }
  return { tokenizerId, root, candidateCount: counter.candidates };
}

export interface Candidate {
  nodeId: string;
  /** Tokens exactly as stored in the tree. */
  tokens: string[];
  /** The rendered id string (tokens joined with single spaces). */
  text: string;
}

/** All candidates in the tree, in sorted token order. */
export function enumerateCandidates(trie: Trie): Candidate[] {
  const out: Candidate[] = [];
  const walk = (node: TrieNode, prefix: string[]): void => {
    if (node.terminal !== null) {
      out.push({
        nodeId: node.terminal,
        tokens: [...prefix],
        text: prefix.join(" "),
      });
    }
    for (const token of [...node.children.keys()].sort()) {
      walk(node.children.get(token)!, [...prefix, token]);
    }
  };
  walk(trie.root, []);
  return out;
}
