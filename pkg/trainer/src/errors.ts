/** Error types raised at the adapter's input boundaries. */

/** The corpus file is empty, unreadable, or a record is malformed. */
export class CorpusFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CorpusFormatError";
  }
}

/** A checkpoint file is missing, corrupt, or from an incompatible version. */
export class ModelLoadError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ModelLoadError";
  }
}

/** The prefix tree was built with a different tokenizer than expected. */
export class TokenizerMismatch extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TokenizerMismatch";
  }
}

/** The prefix-tree file violates the binary format. */
export class CorruptTrieError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CorruptTrieError";
  }
}
