/** Error taxonomy: config problems vs bad input data vs malformed bytes. */

export class ExtractorError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** Invalid configuration: unknown backbone, bad parameter values. */
export class ConfigError extends ExtractorError {}

/** Inputs that parse but violate the dataset contract. */
export class DataError extends ExtractorError {}

/** Bytes that do not follow a declared file format. */
export class FormatError extends ExtractorError {}
