#include "regionedit/toyzoo/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "regionedit/nn/ops.hpp"
#include "regionedit/nn/optim.hpp"
#include "regionedit/rng.hpp"

namespace regionedit::toyzoo {

namespace {

constexpr int kLogWindow = 100;

std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
  Rng rng(seed, stream);
  return rng.next_u64();
}

nn::Mat stack(const std::vector<const Image*>& images) {
  const Shape3 s = images.front()->shape();
  nn::Mat out(static_cast<Eigen::Index>(images.size()) * s.pixels(), s.channels);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i) * s.pixels(), s.pixels()) = to_rows(*images[i]);
  }
  return out;
}

// Accumulates the loss curve and reports progress.
class Progress {
 public:
  Progress(std::string name, int steps, TrainReport& report, const TrainLog& log)
      : name_(std::move(name)), steps_(steps), report_(report), log_(log) {}

  void record(int step, double loss) {
    if (!std::isfinite(loss)) {
      throw TrainingDivergence(name_ + " loss became non-finite at step " + std::to_string(step));
    }
    sum_ += loss;
    ++count_;
    if (count_ == kLogWindow || step == steps_ - 1) {
      const double mean = sum_ / count_;
      report_.loss_curve.push_back(mean);
      if (log_) {
        std::ostringstream line;
        line << name_ << " step " << (step + 1) << "/" << steps_ << " loss " << mean;
        log_(line.str());
      }
      sum_ = 0;
      count_ = 0;
    }
  }

 private:
  std::string name_;
  int steps_;
  TrainReport& report_;
  const TrainLog& log_;
  double sum_ = 0;
  int count_ = 0;
};

void check_training_sizes(int steps, int batch, int dataset, int holdout) {
  if (steps < 1) throw InvalidArgument("steps", "must be >= 1");
  if (batch < 1) throw InvalidArgument("batch", "must be >= 1");
  if (dataset < 1) throw InvalidArgument("dataset_size", "must be >= 1");
  if (holdout < 1) throw InvalidArgument("holdout_size", "must be >= 1");
}

struct View {
  Image image;
  int label = 0;
};

// Full single-entity image or masked crop of one entity.
View make_view(const ShapeSample& sample, Rng& rng) {
  if (sample.entities.size() == 1 && rng.bernoulli(0.4)) {
    return {sample.image, sample.attributes.class_index()};
  }
  const auto k = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(sample.entities.size()) - 1));
  const Entity& e = sample.entities[k];
  return {masked_crop(sample.image, dilate(e.mask, rng.uniform_int(0, 3))),
          e.attributes.class_index()};
}

std::vector<ParsedPrompt> full_prompts() {
  std::vector<ParsedPrompt> out;
  for (int k = 0; k < kNumClasses; ++k) {
    const Attributes a = Attributes::from_class(k);
    out.push_back({a.color, a.shape, false});
  }
  return out;
}

std::vector<ParsedPrompt> color_prompts() {
  std::vector<ParsedPrompt> out;
  for (int c = 0; c < kNumColors; ++c) out.push_back({static_cast<Color>(c), std::nullopt, false});
  return out;
}

std::vector<ParsedPrompt> shape_prompts() {
  std::vector<ParsedPrompt> out;
  for (int s = 0; s < kNumShapes; ++s) {
    out.push_back({std::nullopt, static_cast<ShapeKind>(s), false});
  }
  return out;
}

std::vector<int> segmenter_layers(int depth, int count) {
  if (depth == 9 && count == 3) return {3, 7, 9};
  std::vector<int> out;
  for (int i = 1; i <= count; ++i) {
    out.push_back(std::max(1, static_cast<int>(std::lround(static_cast<double>(depth) * i / count))));
  }
  return out;
}

struct SegTarget {
  std::string prompt;
  const RegionMask* mask = nullptr;  // nullptr: nothing matches
};

SegTarget pick_segmentation_prompt(const ShapeSample& sample, Rng& rng) {
  const double r = rng.uniform(0.0, 1.0);
  const auto k = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<int>(sample.entities.size()) - 1));
  const Entity& e = sample.entities[k];
  const std::string color(kColorNames[static_cast<std::size_t>(e.attributes.color)]);
  const std::string shape(kShapeNames[static_cast<std::size_t>(e.attributes.shape)]);
  if (r < 0.5) return {caption(e.attributes), &e.mask};
  if (r < 0.65) return {"a " + color, &e.mask};
  if (r < 0.8) return {"a " + shape, &e.mask};
  // A class sharing neither color nor shape with any entity.
  std::vector<int> absent;
  for (int c = 0; c < kNumClasses; ++c) {
    const Attributes a = Attributes::from_class(c);
    bool clash = false;
    for (const Entity& other : sample.entities) {
      clash = clash || other.attributes.color == a.color || other.attributes.shape == a.shape;
    }
    if (!clash) absent.push_back(c);
  }
  const int c = absent[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
  return {caption(Attributes::from_class(c)), nullptr};
}

}  // namespace

Image masked_crop(const Image& image, const RegionMask& mask) { return apply_mask(image, mask); }

RegionMask dilate(const RegionMask& mask, int radius) {
  if (radius <= 0) return mask;
  RegionMask out(mask.shape());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(y, x) == 0) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < mask.height() && xx < mask.width()) out.at(yy, xx) = 1;
        }
      }
    }
  }
  return out;
}

double mask_iou(const RegionMask& a, const RegionMask& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch("mask_iou: planes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double caption_retrieval_top1(const TextEncoder& text, const ImageEncoder& image,
                              const std::vector<Image>& images, const std::vector<int>& classes,
                              std::uint64_t seed) {
  if (images.size() != classes.size() || images.empty()) {
    throw InvalidArgument("images", "need matching non-empty image and class lists");
  }
  std::vector<Embedding> img;
  img.reserve(images.size());
  for (const Image& im : images) img.push_back(image.embed_image(im));
  std::vector<Embedding> captions;
  for (int k = 0; k < kNumClasses; ++k) captions.push_back(text.encode(caption(Attributes::from_class(k))));
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    by_class[static_cast<std::size_t>(classes[i])].push_back(i);
  }
  Rng rng(seed, Stream::kSuite);
  int hits = 0;
  int trials = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int k = classes[i];
    const double own = cosine_similarity(captions[static_cast<std::size_t>(k)], img[i]);
    bool best = true;
    for (int j = 0; j < kNumClasses; ++j) {
      const auto& pool = by_class[static_cast<std::size_t>(j)];
      if (j == k || pool.empty()) continue;
      const std::size_t other = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
      if (cosine_similarity(captions[static_cast<std::size_t>(k)], img[other]) >= own) best = false;
    }
    hits += best ? 1 : 0;
    ++trials;
  }
  return static_cast<double>(hits) / trials;
}

// ---------------------------------------------------------------------------

TrainedCodec train_codec(const CodecTrainOptions& options, std::uint64_t seed,
                         const TrainLog& log) {
  check_training_sizes(options.steps, options.batch, options.dataset_size, options.holdout_size);
  const auto data = generate_dataset(options.dataset_size, seed);
  const auto holdout = generate_dataset(options.holdout_size, derive_seed(seed, Stream::kHoldout));
  auto codec = std::make_shared<ToyCodec>(options.config, seed);
  if (kImageSize % codec->downsample_factor() != 0) {
    throw InvalidArgument("factor", "must divide the image size");
  }
  const int lsize = kImageSize / codec->downsample_factor();

  TrainedCodec out;
  out.report.seed = seed;
  out.report.steps = options.steps;
  nn::Adam adam(codec->parameters(), {options.learning_rate, 0.9, 0.999, 1e-8, 1.0});
  Rng order(seed, Stream::kBatchOrder);
  Progress progress("codec", options.steps, out.report, log);
  for (int step = 0; step < options.steps; ++step) {
    adam.set_learning_rate(nn::cosine_lr(options.learning_rate, step, options.steps));
    std::vector<const Image*> batch;
    for (int b = 0; b < options.batch; ++b) {
      batch.push_back(&data[static_cast<std::size_t>(order.uniform_int(0, options.dataset_size - 1))].image);
    }
    nn::Var x = nn::constant(stack(batch));
    nn::Var z = codec->encode_raw(x, options.batch, kImageSize, kImageSize);
    nn::Var recon = codec->decode_raw(z, options.batch, lsize, lsize);
    nn::Var loss = nn::add(nn::mse(recon, x), nn::scale(nn::mean(nn::square(z)), options.latent_penalty));
    progress.record(step, loss.item());
    loss.backward();
    adam.step();
  }

  // Per-channel latent statistics over the training set.
  {
    nn::NoGradGuard no_grad;
    const int c = codec->latent_channels();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(c);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(c);
    Eigen::Index rows = 0;
    for (const ShapeSample& s : data) {
      nn::Var z = codec->encode_raw(nn::constant(to_rows(s.image)), 1, kImageSize, kImageSize);
      sum += z.value().colwise().sum();
      sq += z.value().array().square().matrix().colwise().sum();
      rows += z.rows();
    }
    const Eigen::RowVectorXd mean = sum / static_cast<double>(rows);
    Eigen::RowVectorXd var = sq / static_cast<double>(rows) - mean.cwiseProduct(mean);
    nn::Mat m = mean;
    nn::Mat sd = var.cwiseMax(1e-8).cwiseSqrt();
    codec->set_latent_statistics(m, sd);
  }
  codec->parameters().set_trainable(false);

  double mse = 0;
  for (const ShapeSample& s : holdout) {
    const Image r = codec->decode(codec->encode(s.image));
    double e = 0;
    for (std::size_t i = 0; i < r.size(); ++i) e += (r[i] - s.image[i]) * (r[i] - s.image[i]);
    mse += e / static_cast<double>(r.size());
  }
  out.report.metric_name = "reconstruction_mse";
  out.report.metric = mse / static_cast<double>(holdout.size());
  out.codec = std::move(codec);
  return out;
}

TrainedEmbedder train_embedder(const EmbedderTrainOptions& options, std::uint64_t seed,
                               const TrainLog& log) {
  check_training_sizes(options.steps, options.batch, options.dataset_size, options.holdout_size);
  if (options.text.dim != options.image.dim) {
    throw InvalidArgument("dim", "text and image embeddings must share a dimension");
  }
  const auto data = generate_dataset(options.dataset_size, seed);
  const auto holdout = generate_dataset(options.holdout_size, derive_seed(seed, Stream::kHoldout));
  auto text = std::make_shared<ToyTextEncoder>(options.text, seed);
  auto image = std::make_shared<ToyImageEncoder>(options.image, derive_seed(seed, Stream::kInit));

  TrainedEmbedder out;
  out.report.seed = seed;
  out.report.steps = options.steps;
  const nn::Adam::Options adam_options{options.learning_rate, 0.9, 0.999, 1e-8, 1.0};
  nn::Adam text_adam(text->parameters(), adam_options);
  nn::Adam image_adam(image->parameters(), adam_options);
  Rng order(seed, Stream::kBatchOrder);
  Progress progress("embedder", options.steps, out.report, log);
  const auto full = full_prompts();
  const auto colors = color_prompts();
  const auto shapes = shape_prompts();

  for (int step = 0; step < options.steps; ++step) {
    const double lr = nn::cosine_lr(options.learning_rate, step, options.steps);
    text_adam.set_learning_rate(lr);
    image_adam.set_learning_rate(lr);
    std::vector<View> views;
    for (int b = 0; b < options.batch; ++b) {
      views.push_back(make_view(data[static_cast<std::size_t>(order.uniform_int(0, options.dataset_size - 1))], order));
    }
    std::vector<const Image*> ptrs;
    std::vector<int> labels;
    std::vector<int> color_labels;
    std::vector<int> shape_labels;
    for (const View& v : views) {
      ptrs.push_back(&v.image);
      labels.push_back(v.label);
      const Attributes a = Attributes::from_class(v.label);
      color_labels.push_back(static_cast<int>(a.color));
      shape_labels.push_back(static_cast<int>(a.shape));
    }
    nn::Var emb = nn::normalize_rows(
        image->embed(nn::constant(stack(ptrs)), options.batch, kImageSize, kImageSize));
    auto logits = [&](const std::vector<ParsedPrompt>& prompts) {
      return nn::scale(nn::matmul(emb, nn::transpose(text->embed_prompts(prompts))),
                       options.temperature);
    };
    nn::Var loss = nn::cross_entropy(logits(full), labels);
    nn::Var partial = nn::add(nn::cross_entropy(logits(colors), color_labels),
                              nn::cross_entropy(logits(shapes), shape_labels));
    loss = nn::add(loss, nn::scale(partial, 0.5));
    progress.record(step, loss.item());
    loss.backward();
    text_adam.step();
    image_adam.step();
  }
  text->parameters().set_trainable(false);
  image->parameters().set_trainable(false);

  Rng views_rng(seed, Stream::kHoldout);
  std::vector<Image> images;
  std::vector<int> classes;
  for (const ShapeSample& s : holdout) {
    View v = make_view(s, views_rng);
    images.push_back(std::move(v.image));
    classes.push_back(v.label);
  }
  int correct = 0;
  std::vector<Embedding> captions;
  for (const ParsedPrompt& p : full) {
    captions.push_back(text->encode(caption({*p.shape, *p.color})));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Embedding e = image->embed_image(images[i]);
    int best = 0;
    double best_score = -2;
    for (int k = 0; k < kNumClasses; ++k) {
      const double sc = cosine_similarity(captions[static_cast<std::size_t>(k)], e);
      if (sc > best_score) {
        best_score = sc;
        best = k;
      }
    }
    correct += best == classes[i] ? 1 : 0;
  }
  out.report.metric_name = "caption_retrieval_top1";
  out.report.metric = caption_retrieval_top1(*text, *image, images, classes, seed);
  out.report.extra["classification_accuracy"] =
      static_cast<double>(correct) / static_cast<double>(images.size());
  out.text = std::move(text);
  out.image = std::move(image);
  return out;
}

TrainedSegmenter train_segmenter(const SegmenterTrainOptions& options,
                                 const ToyTextEncoder& text_encoder, std::uint64_t seed,
                                 const TrainLog& log) {
  check_training_sizes(options.steps, options.batch, options.dataset_size, options.holdout_size);
  SegmentationDecoder::Shape shape = options.decoder;
  shape.backbone_width = options.backbone.width;
  shape.patch_size = options.backbone.patch;
  shape.condition_dim = text_encoder.dim();
  const auto data = generate_dataset(options.dataset_size, seed);
  const auto holdout = generate_dataset(options.holdout_size, derive_seed(seed, Stream::kHoldout));

  auto backbone = std::make_shared<ToyBackbone>(options.backbone, seed);
  Rng decoder_rng(derive_seed(seed, Stream::kInit), Stream::kInit);
  auto decoder = std::make_shared<SegmentationDecoder>(shape, decoder_rng);
  CalibrationConfig config = toy_calibration_config();
  config.patch_size = shape.patch_size;
  config.embed_dim = shape.embed_dim;
  config.extraction_layers = segmenter_layers(options.backbone.depth, shape.layers);
  auto segmenter = std::make_shared<Segmenter>(backbone, decoder, config);

  TrainedSegmenter out;
  out.report.seed = seed;
  out.report.steps = options.steps;
  const nn::Adam::Options adam_options{options.learning_rate, 0.9, 0.999, 1e-8, 1.0};
  nn::Adam backbone_adam(backbone->parameters(), adam_options);
  nn::Adam decoder_adam(decoder->parameters(), adam_options);
  Rng order(seed, Stream::kBatchOrder);
  Progress progress("segmenter", options.steps, out.report, log);
  const int pixels = kImageSize * kImageSize;

  for (int step = 0; step < options.steps; ++step) {
    const double lr = nn::cosine_lr(options.learning_rate, step, options.steps);
    backbone_adam.set_learning_rate(lr);
    decoder_adam.set_learning_rate(lr);
    std::vector<const Image*> ptrs;
    nn::Mat conds(options.batch, text_encoder.dim());
    nn::Mat targets = nn::Mat::Zero(static_cast<Eigen::Index>(options.batch) * pixels, 1);
    for (int b = 0; b < options.batch; ++b) {
      const ShapeSample& s = data[static_cast<std::size_t>(order.uniform_int(0, options.dataset_size - 1))];
      ptrs.push_back(&s.image);
      const SegTarget target = pick_segmentation_prompt(s, order);
      const Embedding e = text_encoder.encode(target.prompt);
      for (int k = 0; k < e.dim(); ++k) conds(b, k) = e.values[static_cast<std::size_t>(k)];
      if (target.mask != nullptr) {
        for (int p = 0; p < pixels; ++p) {
          targets(static_cast<Eigen::Index>(b) * pixels + p, 0) = (*target.mask)[static_cast<std::size_t>(p)];
        }
      }
    }
    nn::Var logits = segmenter->logits(nn::constant(stack(ptrs)), options.batch, kImageSize,
                                       kImageSize, nn::constant(std::move(conds)));
    nn::Var loss = nn::bce_with_logits(logits, targets);
    progress.record(step, loss.item());
    loss.backward();
    backbone_adam.step();
    decoder_adam.step();
  }
  backbone->parameters().set_trainable(false);
  decoder->parameters().set_trainable(false);

  std::vector<double> ious;
  for (const ShapeSample& s : holdout) {
    const RegionMask m = threshold_mask(segment(s.image, s.caption, text_encoder, *segmenter), config.threshold);
    ious.push_back(mask_iou(m, s.gt_mask));
  }
  std::vector<double> sorted = ious;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = 0;
  for (double v : ious) mean += v;
  out.report.metric_name = "median_iou";
  out.report.metric = median;
  out.report.extra["mean_iou"] = mean / static_cast<double>(n);
  out.backbone = std::move(backbone);
  out.decoder = std::move(decoder);
  out.segmenter = std::move(segmenter);
  return out;
}

TrainedDenoiser train_denoiser(const DenoiserTrainOptions& options, const Codec& codec,
                               const ToyTextEncoder& text_encoder, const NoiseSchedule& schedule,
                               std::uint64_t seed, const TrainLog& log) {
  check_training_sizes(options.steps, options.batch, options.dataset_size, options.holdout_size);
  ToyDenoiser::Config config = options.config;
  config.cond_dim = text_encoder.dim();
  const Shape3 latent = codec.latent_shape_for(Shape3{kImageSize, kImageSize, 3});
  if (latent != config.latent) {
    throw InvalidArgument("latent", "denoiser geometry " + config.latent.to_string() +
                                        " does not match the codec's " + latent.to_string());
  }
  const auto d = static_cast<Eigen::Index>(latent.size());

  auto encode_all = [&](const std::vector<ShapeSample>& samples, nn::Mat& z, std::vector<int>& cls) {
    z.resize(static_cast<Eigen::Index>(samples.size()), d);
    cls.clear();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Latent l = codec.encode(samples[i].image);
      z.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(l.storage().data(), d);
      cls.push_back(samples[i].attributes.class_index());
    }
  };
  nn::Mat train_z;
  nn::Mat hold_z;
  std::vector<int> train_cls;
  std::vector<int> hold_cls;
  encode_all(generate_dataset(options.dataset_size, seed), train_z, train_cls);
  encode_all(generate_dataset(options.holdout_size, derive_seed(seed, Stream::kHoldout)), hold_z,
             hold_cls);

  nn::Mat class_emb(kNumClasses, config.cond_dim);
  for (int k = 0; k < kNumClasses; ++k) {
    const Embedding e = text_encoder.encode(caption(Attributes::from_class(k)));
    for (int j = 0; j < config.cond_dim; ++j) class_emb(k, j) = e.values[static_cast<std::size_t>(j)];
  }

  struct Batch {
    nn::Mat z;
    nn::Mat eps;
    nn::Mat cond;
    std::vector<int> steps;
  };
  auto make_batch = [&](const nn::Mat& z0, const std::vector<int>& cls,
                        const std::vector<Eigen::Index>& rows, Rng& rng, double dropout) {
    Batch b;
    const auto n = static_cast<Eigen::Index>(rows.size());
    b.z.resize(n, d);
    b.eps.resize(n, d);
    b.cond = nn::Mat::Zero(n, config.cond_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int t = rng.uniform_int(1, schedule.steps());
      b.steps.push_back(schedule.model_step(t));
      const double ab = schedule.alpha_bar(t);
      for (Eigen::Index j = 0; j < d; ++j) b.eps(i, j) = rng.normal();
      b.z.row(i) = std::sqrt(ab) * z0.row(rows[static_cast<std::size_t>(i)]) + std::sqrt(1 - ab) * b.eps.row(i);
      if (!(dropout > 0 && rng.bernoulli(dropout))) {
        b.cond.row(i) = class_emb.row(cls[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])]);
      }
    }
    return b;
  };

  auto denoiser = std::make_shared<ToyDenoiser>(config, seed);
  Rng holdout_rng(seed, Stream::kHoldout);
  std::vector<Eigen::Index> hold_rows;
  for (Eigen::Index i = 0; i < hold_z.rows(); ++i) hold_rows.push_back(i);
  const Batch held = make_batch(hold_z, hold_cls, hold_rows, holdout_rng, 0.0);
  auto heldout_loss = [&]() {
    nn::NoGradGuard no_grad;
    return nn::mse(denoiser->forward(nn::constant(held.z), held.steps, nn::constant(held.cond)),
                   nn::constant(held.eps))
        .item();
  };

  TrainedDenoiser out;
  out.report.seed = seed;
  out.report.steps = options.steps;
  const double initial = heldout_loss();
  nn::Adam adam(denoiser->parameters(), {options.learning_rate, 0.9, 0.999, 1e-8, 1.0});
  Rng order(seed, Stream::kBatchOrder);
  Rng noise(seed, Stream::kTrainingNoise);
  Progress progress("denoiser", options.steps, out.report, log);
  for (int step = 0; step < options.steps; ++step) {
    adam.set_learning_rate(nn::cosine_lr(options.learning_rate, step, options.steps));
    std::vector<Eigen::Index> rows;
    for (int b = 0; b < options.batch; ++b) rows.push_back(order.uniform_int(0, options.dataset_size - 1));
    const Batch batch = make_batch(train_z, train_cls, rows, noise, options.prompt_dropout);
    nn::Var pred = denoiser->forward(nn::constant(batch.z), batch.steps, nn::constant(batch.cond));
    nn::Var loss = nn::mse(pred, nn::constant(batch.eps));
    progress.record(step, loss.item());
    loss.backward();
    adam.step();
  }
  denoiser->parameters().set_trainable(false);
  const double final_loss = heldout_loss();
  out.report.metric_name = "heldout_noise_mse";
  out.report.metric = final_loss;
  out.report.extra["initial_heldout_noise_mse"] = initial;
  out.report.extra["relative_drop"] = 1.0 - final_loss / initial;
  out.denoiser = std::move(denoiser);
  return out;
}

}  // namespace regionedit::toyzoo
