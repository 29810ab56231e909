export { ConfigError, DataError, ExtractorError, FormatError } from './errors.js';
export { SplitMix64, hashString } from './rng.js';
export { Image, decodePpm, encodePpm, makeImage, setPixel } from './ppm.js';
export {
  TextBackbone,
  VisualBackbone,
  textBackbone,
  visualBackbone,
} from './backbones.js';
export { colormap, depthToImage, encodeDepth, estimateDepth } from './depth.js';
export {
  AAGC_VERSION,
  AAGF_VERSION,
  DEPTH_CODES,
  DatasetMeta,
  DepthSource,
  EmbeddingRecord,
  encodeAagc,
  encodeAagf,
  readAagfHeader,
  writeFileAtomic,
} from './formats.js';
export {
  Annotations,
  Segment,
  Video,
  frameFileName,
  loadAnnotations,
  parseAnnotations,
} from './annotations.js';
export {
  ExtractionConfig,
  ExtractionSummary,
  Skip,
  TOOL_VERSION,
  buildDataset,
  describeHistory,
  historyIds,
  loadConfig,
  resolveConfig,
} from './extract.js';
export {
  FIXTURE_ANNOTATIONS,
  FIXTURE_CLASSES,
  fixtureConfig,
  fixtureFrame,
  fixturesDir,
  generateFixtureDataset,
  packageRoot,
} from './fixturegen.js';
