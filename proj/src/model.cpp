#include "mmf/training.hpp"

#include <algorithm>

namespace mmf {

Tensor truncate_seq(const Tensor& stack, std::size_t max_len) {
  if (stack.rank() != 3)
    throw ShapeError("truncate_seq expects a rank-3 layer stack, got rank " +
                     std::to_string(stack.rank()));
  std::size_t layers = stack.shape()[0], n = stack.shape()[1], d = stack.shape()[2];
  if (n <= max_len) return stack;
  std::vector<double> kept(layers * max_len * d);
  for (std::size_t l = 0; l < layers; ++l)
    std::copy_n(stack.data().begin() + l * n * d, max_len * d,
                kept.begin() + l * max_len * d);
  return Tensor::from_data({layers, max_len, d}, std::move(kept));
}

Model::Model(const TrainConfig& cfg, const DatasetHeader& header)
    : cfg_(cfg), header_(header) {
  validate(cfg);
  if (header.k_classes < 2) throw DataError("model needs at least two classes");
  Rng rng(cfg.seed);

  auto push = [&](const std::string& name, Tensor t, double lr_scale = 1.0) {
    params_.push_back({name, t, lr_scale});
  };

  const std::size_t d_t = header.text_dim, d_img = header.image_dim;
  const std::size_t k_classes = static_cast<std::size_t>(header.k_classes);

  if (cfg.variant == ModelVariant::kCoAttention) {
    const std::size_t d = cfg.common_dim;
    const std::size_t k = cfg.attn_dim ? cfg.attn_dim : d;
    if (cfg.weighted_layer_mix) {
      mix_ = ScalarMixParams::init(header.layers);
      push("mix.logits", mix_->layer_logits, cfg.adapter_lr_scale);
      push("mix.gamma", mix_->gamma, cfg.adapter_lr_scale);
    }
    if (cfg.recurrent_encoder) {
      lstm_ = BiLstmParams::init(d_t, cfg.hidden, rng);
      auto push_dir = [&](const char* tag, LstmDirectionParams& dir) {
        std::string base = std::string("lstm.") + tag + ".";
        push(base + "w_input", dir.w_input);
        push(base + "u_input", dir.u_input);
        push(base + "b_input", dir.b_input);
        push(base + "w_forget", dir.w_forget);
        push(base + "u_forget", dir.u_forget);
        push(base + "b_forget", dir.b_forget);
        push(base + "w_cell", dir.w_cell);
        push(base + "u_cell", dir.u_cell);
        push(base + "b_cell", dir.b_cell);
        push(base + "w_output", dir.w_output);
        push(base + "u_output", dir.u_output);
        push(base + "b_output", dir.b_output);
      };
      push_dir("fwd", lstm_->fwd);
      push_dir("bwd", lstm_->bwd);
      proj_ = SeqProjectionParams::init(2 * cfg.hidden, d, rng);
      push("proj.weight", proj_->weight);
      push("proj.bias", proj_->bias);
    } else {
      text_ff_ = SeqProjectionParams::init(d_t, d, rng);
      push("text_ff.weight", text_ff_->weight);
      push("text_ff.bias", text_ff_->bias);
    }
    adapter_ = ImageAdapterParams::init(d_img, d, rng);
    push("img_adapter.weight", adapter_->weight, cfg.adapter_lr_scale);
    push("img_adapter.bias", adapter_->bias, cfg.adapter_lr_scale);

    coattn_ = CoAttentionParams::init(d, k, rng);
    push("coattn.w_affinity", coattn_->w_affinity);
    push("coattn.w_image", coattn_->w_image);
    push("coattn.w_seq", coattn_->w_seq);
    push("coattn.w_score_image", coattn_->w_score_image);
    push("coattn.w_score_text", coattn_->w_score_text);

    feature_width_ = cfg.attention == AttentionMode::kBoth ? 2 * d : d;
  } else if (cfg.variant == ModelVariant::kConcatBaseline) {
    feature_width_ = d_img + d_t;
  } else if (cfg.variant == ModelVariant::kBilinearBaseline) {
    std::size_t width = cfg.bilinear_width ? cfg.bilinear_width : std::min(d_img, d_t);
    bilinear_ = BilinearFusionParams::init(d_img, d_t, width, rng);
    push("bilinear.tensor", bilinear_->tensor);
    push("bilinear.bias", bilinear_->bias);
    feature_width_ = width;
  } else {
    dot_ = DotFusionParams::init(d_img, d_t, rng);
    push("dot.weight", dot_->weight);
    push("dot.bias", dot_->bias);
    feature_width_ = d_img;
  }

  std::size_t head_hidden = cfg.head_hidden ? cfg.head_hidden : feature_width_;
  head_ = ClassifierHead::init(feature_width_, head_hidden, k_classes, rng);
  push("head.w_hidden", head_->w_hidden);
  push("head.b_hidden", head_->b_hidden);
  push("head.w_out", head_->w_out);
  push("head.b_out", head_->b_out);
}

std::size_t Model::scalar_count() const {
  std::size_t total = 0;
  for (const NamedParam& p : params_) total += p.tensor.size();
  return total;
}

Tensor Model::text_feature(const LoadedItem& item) const {
  // frozen contextual feature: first token of the top layer
  return row(top_layer(truncate_seq(item.text_stack, cfg_.max_seq_len)), 0);
}

Tensor Model::image_feature(const LoadedItem& item) const {
  // frozen visual feature: mean region vector
  return scalar_mul(reduce_sum(item.image, 0), 1.0 / static_cast<double>(item.image.shape()[0]));
}

Tensor Model::item_probs(const LoadedItem& item) const {
  if (item.text_stack.rank() != 3 || item.text_stack.shape()[2] != header_.text_dim)
    throw DataError("item " + item.id + ": text stack does not match the trained dimensions");
  if (item.image.rank() != 2 || item.image.shape()[1] != header_.image_dim)
    throw DataError("item " + item.id + ": image matrix does not match the trained dimensions");

  if (cfg_.variant == ModelVariant::kCoAttention) {
    Tensor stack = truncate_seq(item.text_stack, cfg_.max_seq_len);
    Tensor mixed = cfg_.weighted_layer_mix ? scalar_mix(stack, *mix_) : top_layer(stack);
    Tensor seq = cfg_.recurrent_encoder
                     ? affine(bilstm_forward(mixed, *lstm_), proj_->weight, proj_->bias)
                     : affine(mixed, text_ff_->weight, text_ff_->bias);
    Tensor img = encode_image(item.image, *adapter_);
    CoAttentionOutput att = coattend(seq, img, *coattn_, cfg_.attention);
    return classify(att.feature, *head_);
  }

  Tensor img_vec = image_feature(item);
  Tensor txt_vec = text_feature(item);
  Tensor feature;
  switch (cfg_.variant) {
    case ModelVariant::kConcatBaseline: feature = fuse_concat(img_vec, txt_vec); break;
    case ModelVariant::kBilinearBaseline: feature = fuse_bilinear(img_vec, txt_vec, *bilinear_); break;
    default: feature = fuse_dot(img_vec, txt_vec, *dot_); break;
  }
  return classify(feature, *head_);
}

}  // namespace mmf
