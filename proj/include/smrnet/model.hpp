#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smrnet/detector.hpp"
#include "smrnet/fusion.hpp"

namespace smrnet {

struct AnchorConfig {
  std::vector<double> scales = {16, 32, 64};
  std::vector<double> ratios = {0.5, 1.0, 2.0};
  int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
};

struct DetectionFilter {
  double nms_thresh = 0.3;
  double score_floor = 0.05;
  int max_detections = 20;
};

// Hyperparameter record sufficient to reconstruct the network.
struct ModelConfig {
  std::string preset = "tiny";  // tiny | full
  bool attention_enabled = true;
  bool attention_per_block = false;
  bool msff_enabled = true;
  bool rw_enabled = true;  // false: concatenation fusion instead
  int64_t d2 = 2, d3 = 4;
  int64_t fused_channels = 64;
  int64_t head_hidden = 256;
  int64_t in_channels = 1;
  int num_classes = 3;  // background, type A, type B
  bool rpn_concat_combine = false;
  int64_t reduction = 4;
  int64_t roi_size = 7;
  AnchorConfig anchors;
  ProposalParams proposals_train{2000, 256, 0.7, 4.0};
  ProposalParams proposals_eval{1000, 100, 0.7, 4.0};
  DetectionFilter detection;

  static ModelConfig tiny() { return ModelConfig{}; }

  static ModelConfig full() {
    ModelConfig c;
    c.preset = "full";
    c.fused_channels = 256;
    c.head_hidden = 1024;
    return c;
  }

  BackboneConfig backbone_config() const {
    BackboneConfig b = preset == "full" ? BackboneConfig::full() : BackboneConfig::tiny();
    b.in_channels = in_channels;
    b.attention_enabled = attention_enabled;
    b.attention_per_block = attention_per_block;
    b.reduction = reduction;
    return b;
  }

  FusionConfig fusion_config() const {
    FusionConfig f;
    f.fused_channels = fused_channels;
    f.d2 = d2;
    f.d3 = d3;
    f.reduction = reduction;
    return f;
  }

  // Stride of the map the RPN and RoI pooling operate on.
  int64_t fused_stride() const { return msff_enabled ? 8 : 32; }
};

// The full detector: backbone pyramid, multi-scale fusion (reweighted or
// concatenated), multi-kernel RPN, and the RoI classification head. With
// msff_enabled=false the head runs on the projected top-level map alone.
template <class T>
struct SmrNet {
  ModelConfig cfg;
  Backbone<T> backbone;
  std::optional<Msff<T>> msff;
  std::optional<RwNet<T>> rw;
  std::optional<Conv2dLayer<T>> concat_proj;  // rw disabled
  std::optional<Conv2dLayer<T>> f3_proj;      // msff disabled
  RpnHead<T> rpn;
  DetectionHead<T> head;
  bool training = true;

  explicit SmrNet(const ModelConfig& config)
      : cfg(config), backbone(config.backbone_config()) {
    const int64_t cf = cfg.fused_channels;
    if (cfg.msff_enabled) {
      msff.emplace(cfg.fusion_config(), backbone.f1_channels(), backbone.f2_channels(),
                   backbone.f3_channels());
      if (cfg.rw_enabled)
        rw.emplace(cf);
      else
        concat_proj.emplace(cf, 3 * cf, 1, 1, 0, 1);
    } else {
      f3_proj.emplace(cf, backbone.f3_channels(), 1, 1, 0, 1);
    }
    rpn = RpnHead<T>(cf, cfg.anchors.per_cell(), cfg.rpn_concat_combine);
    head = DetectionHead<T>(cf * cfg.roi_size * cfg.roi_size, cfg.head_hidden,
                            cfg.num_classes);
  }

  TensorT<T> fused_features(const TensorT<T>& images) {
    auto pyr = backbone.forward(images);
    if (!cfg.msff_enabled) return conv2d(*f3_proj, pyr.f3);
    auto g = msff->forward(pyr);
    if (cfg.rw_enabled) return rw->fuse(g[0], g[1], g[2]);
    return concat_fuse(*concat_proj, g[0], g[1], g[2]);
  }

  void visit(const ParamVisitor<T>& v) {
    backbone.visit("backbone", v);
    if (msff) msff->visit("msff", v);
    if (rw) rw->visit("rw", v);
    if (concat_proj) concat_proj->visit("concat_proj", v);
    if (f3_proj) f3_proj->visit("f3_proj", v);
    rpn.visit("rpn", v);
    head.visit("head", v);
  }

  void set_training(bool train_mode) {
    training = train_mode;
    backbone.set_training(train_mode);
  }

  void init(uint64_t seed) {
    Rng rng(seed);
    backbone.init(rng);
    if (msff) msff->init(rng);
    if (rw) rw->init(rng);
    if (concat_proj) init_params(*concat_proj, rng);
    if (f3_proj) init_params(*f3_proj, rng);
    rpn.init(rng);
    head.init(rng);
  }

  int64_t trainable_param_count() {
    return param_count<T>(*this);
  }
};

using Model = SmrNet<float>;

// SGD with momentum and global gradient-norm clipping.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double clip_norm)
      : lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(SmrNet<T>& model) {
    double sq = 0;
    model.visit([&](const std::string&, TensorT<T>& t, ParamKind kind) {
      if (kind != ParamKind::trainable || !t.has_grad()) return;
      for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm_ > 0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
    model.visit([&](const std::string& name, TensorT<T>& t, ParamKind kind) {
      if (kind != ParamKind::trainable || !t.has_grad()) return;
      auto& vel = velocity_[name];
      if (vel.empty()) vel.assign(static_cast<size_t>(t.numel()), T(0));
      T* p = t.ptr();
      const auto& g = t.grad();
      for (size_t i = 0; i < vel.size(); ++i) {
        vel[i] = static_cast<T>(momentum_) * vel[i] + static_cast<T>(scale) * g[i];
        p[i] -= static_cast<T>(lr_) * vel[i];
      }
    });
  }

  void zero_grad(SmrNet<T>& model) {
    model.visit([](const std::string&, TensorT<T>& t, ParamKind) { t.zero_grad(); });
  }

 private:
  double lr_, momentum_, clip_norm_;
  std::map<std::string, std::vector<T>> velocity_;
};

struct TrainConfig {
  double lr = 0.005;
  double momentum = 0.9;
  double clip_norm = 10.0;
  int epochs = 15;
  int batch_size = 4;
  int rpn_batch = 256;
  double rpn_pos_frac = 0.5;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int roi_batch = 128;
  double roi_pos_frac = 0.25;
  double fg_iou = 0.5;
};

// Ground truth for one image.
struct GtSample {
  std::vector<BBox> boxes;
  std::vector<int> classes;  // 1..num_classes-1
};

namespace detail {

// Anchor labels for one image: +1 positive, 0 negative, -1 ignored; positives
// carry the index of their matched ground-truth box.
struct AnchorAssignment {
  std::vector<int8_t> label;
  std::vector<int> matched_gt;
};

inline AnchorAssignment assign_anchors(const std::vector<Anchor>& anchors,
                                       const std::vector<BBox>& gts, double pos_iou,
                                       double neg_iou) {
  AnchorAssignment out;
  out.label.assign(anchors.size(), int8_t{-1});
  out.matched_gt.assign(anchors.size(), -1);
  std::vector<double> best_gt_iou(gts.size(), 0.0);
  std::vector<size_t> best_gt_anchor(gts.size(), 0);
  for (size_t k = 0; k < anchors.size(); ++k) {
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[k].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
      if (v > best_gt_iou[g]) {
        best_gt_iou[g] = v;
        best_gt_anchor[g] = k;
      }
    }
    if (best >= pos_iou) {
      out.label[k] = 1;
      out.matched_gt[k] = best_gt;
    } else if (best <= neg_iou) {
      out.label[k] = 0;
    }
  }
  // The best anchor for each ground truth is positive regardless of IoU.
  for (size_t g = 0; g < gts.size(); ++g) {
    const size_t k = best_gt_anchor[g];
    out.label[k] = 1;
    out.matched_gt[k] = static_cast<int>(g);
  }
  return out;
}

// Deterministic subsample: shuffle a copy, keep the first n.
inline std::vector<size_t> sample_subset(const std::vector<size_t>& pool, size_t n,
                                         Rng& rng) {
  if (pool.size() <= n) return pool;
  std::vector<size_t> copy = pool;
  rng.shuffle(copy);
  copy.resize(n);
  return copy;
}

}  // namespace detail

struct StepLosses {
  double total = 0;
  double rpn_cls = 0;
  double rpn_reg = 0;
  double head_cls = 0;
  double head_reg = 0;
};

// One joint training step over a batch: RPN binary cross-entropy and smooth-L1
// on sampled anchors, plus head cross-entropy and smooth-L1 on sampled RoIs.
// Images without ground truth are skipped with a warning on stderr.
template <class T>
StepLosses training_step(SmrNet<T>& model, SgdMomentum<T>& opt, const TensorT<T>& images,
                         const std::vector<GtSample>& gts, const TrainConfig& tc,
                         Rng& rng) {
  const int64_t N = images.dim(0);
  check_arg(static_cast<int64_t>(gts.size()) == N, "training_step: gt count mismatch");
  const double img_h = static_cast<double>(images.dim(2));
  const double img_w = static_cast<double>(images.dim(3));

  model.set_training(true);
  opt.zero_grad(model);

  StepLosses losses;
  {
    TapeT<T> tape;
    auto fused = model.fused_features(images);
    auto out = rpn_forward(model.rpn, fused);
    const int A = model.cfg.anchors.per_cell();
    const int h = static_cast<int>(fused.dim(2));
    const int w = static_cast<int>(fused.dim(3));
    const double stride = static_cast<double>(model.cfg.fused_stride());
    const auto anchors = generate_anchors(h, w, stride, model.cfg.anchors.scales,
                                          model.cfg.anchors.ratios);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t plane = static_cast<int64_t>(A) * hw;

    auto cls_targets = TensorT<T>::zeros(out.logits.shape());
    auto cls_mask = TensorT<T>::zeros(out.logits.shape());
    auto reg_targets = TensorT<T>::zeros(out.deltas.shape());
    auto reg_mask = TensorT<T>::zeros(out.deltas.shape());
    int64_t total_sampled = 0, total_pos = 0;

    std::vector<std::pair<int64_t, BBox>> rois;
    std::vector<int> roi_labels;
    std::vector<std::array<double, 4>> roi_deltas;  // valid for foreground rois
    int64_t total_fg = 0;

    for (int64_t n = 0; n < N; ++n) {
      if (gts[static_cast<size_t>(n)].boxes.empty()) {
        std::fprintf(stderr, "warning: image %lld has no ground truth, skipped\n",
                     static_cast<long long>(n));
        continue;
      }
      const auto& gt = gts[static_cast<size_t>(n)];
      auto assign =
          detail::assign_anchors(anchors, gt.boxes, tc.rpn_pos_iou, tc.rpn_neg_iou);

      std::vector<size_t> pos, neg;
      for (size_t k = 0; k < anchors.size(); ++k) {
        if (assign.label[k] == 1) pos.push_back(k);
        if (assign.label[k] == 0) neg.push_back(k);
      }
      const auto max_pos = static_cast<size_t>(tc.rpn_batch * tc.rpn_pos_frac);
      auto pos_keep = detail::sample_subset(pos, max_pos, rng);
      auto neg_keep = detail::sample_subset(
          neg, static_cast<size_t>(tc.rpn_batch) - pos_keep.size(), rng);

      auto flat = [&](size_t k) {
        const int slot = static_cast<int>(k % static_cast<size_t>(A));
        const Anchor& a = anchors[k];
        return n * plane + slot * hw + static_cast<int64_t>(a.cell_i) * w + a.cell_j;
      };
      for (size_t k : pos_keep) {
        const int64_t fi = flat(k);
        cls_targets.data()[static_cast<size_t>(fi)] = T(1);
        cls_mask.data()[static_cast<size_t>(fi)] = T(1);
        const auto d = encode_box(gt.boxes[static_cast<size_t>(assign.matched_gt[k])],
                                  anchors[k].box);
        const int slot = static_cast<int>(k % static_cast<size_t>(A));
        const Anchor& a = anchors[k];
        for (int t = 0; t < 4; ++t) {
          const int64_t ri = n * 4 * plane + (4 * slot + t) * hw +
                             static_cast<int64_t>(a.cell_i) * w + a.cell_j;
          reg_targets.data()[static_cast<size_t>(ri)] = static_cast<T>(d[static_cast<size_t>(t)]);
          reg_mask.data()[static_cast<size_t>(ri)] = T(1);
        }
      }
      for (size_t k : neg_keep) cls_mask.data()[static_cast<size_t>(flat(k))] = T(1);
      total_sampled += static_cast<int64_t>(pos_keep.size() + neg_keep.size());
      total_pos += static_cast<int64_t>(pos_keep.size());

      // Region proposals for the head, with ground truth appended so the head
      // always sees foreground examples.
      auto proposals =
          select_proposals(out.logits.ptr() + n * plane, out.deltas.ptr() + n * 4 * plane,
                           anchors, A, h, w, img_w, img_h, model.cfg.proposals_train);
      for (const auto& b : gt.boxes) proposals.push_back(b);

      std::vector<size_t> fg_pool, bg_pool;
      std::vector<int> prop_gt(proposals.size(), -1);
      for (size_t p = 0; p < proposals.size(); ++p) {
        double best = 0;
        int best_gt = -1;
        for (size_t g = 0; g < gt.boxes.size(); ++g) {
          const double v = iou(proposals[p], gt.boxes[g]);
          if (v > best) {
            best = v;
            best_gt = static_cast<int>(g);
          }
        }
        if (best >= tc.fg_iou) {
          fg_pool.push_back(p);
          prop_gt[p] = best_gt;
        } else {
          bg_pool.push_back(p);
        }
      }
      const auto max_fg = static_cast<size_t>(tc.roi_batch * tc.roi_pos_frac);
      auto fg_keep = detail::sample_subset(fg_pool, max_fg, rng);
      auto bg_keep = detail::sample_subset(
          bg_pool, static_cast<size_t>(tc.roi_batch) - fg_keep.size(), rng);
      for (size_t p : fg_keep) {
        const BBox& roi = proposals[p];
        rois.emplace_back(n, roi);
        const int g = prop_gt[p];
        roi_labels.push_back(gt.classes[static_cast<size_t>(g)]);
        roi_deltas.push_back(encode_box(gt.boxes[static_cast<size_t>(g)], roi));
        ++total_fg;
      }
      for (size_t p : bg_keep) {
        rois.emplace_back(n, proposals[p]);
        roi_labels.push_back(0);
        roi_deltas.push_back({0, 0, 0, 0});
      }
    }

    if (total_sampled == 0) {
      std::fprintf(stderr, "warning: batch has no usable ground truth, step skipped\n");
      return losses;
    }

    auto rpn_cls_loss = bce_with_logits_sum(out.logits, cls_targets, cls_mask,
                                            static_cast<double>(total_sampled));
    auto rpn_reg_loss = smooth_l1_sum(out.deltas, reg_targets, reg_mask,
                                      static_cast<double>(std::max<int64_t>(1, total_pos)));
    losses.rpn_cls = static_cast<double>(rpn_cls_loss.item());
    losses.rpn_reg = static_cast<double>(rpn_reg_loss.item());
    auto loss = add(rpn_cls_loss, rpn_reg_loss);

    if (!rois.empty()) {
      auto pooled = roi_pool_rows(fused, rois, stride, model.cfg.roi_size);
      auto head_out = detection_head(model.head, pooled);
      auto head_cls_loss = cross_entropy_mean(head_out.cls_logits, roi_labels);

      const int64_t R = head_out.reg.dim(0);
      const int64_t D = head_out.reg.dim(1);
      auto head_reg_targets = TensorT<T>::zeros({R, D});
      auto head_reg_mask = TensorT<T>::zeros({R, D});
      for (int64_t r = 0; r < R; ++r) {
        const int c = roi_labels[static_cast<size_t>(r)];
        if (c == 0) continue;
        for (int t = 0; t < 4; ++t) {
          head_reg_targets.data()[static_cast<size_t>(r * D + 4 * c + t)] =
              static_cast<T>(roi_deltas[static_cast<size_t>(r)][static_cast<size_t>(t)]);
          head_reg_mask.data()[static_cast<size_t>(r * D + 4 * c + t)] = T(1);
        }
      }
      auto head_reg_loss =
          smooth_l1_sum(head_out.reg, head_reg_targets, head_reg_mask,
                        static_cast<double>(std::max<int64_t>(1, total_fg)));
      losses.head_cls = static_cast<double>(head_cls_loss.item());
      losses.head_reg = static_cast<double>(head_reg_loss.item());
      loss = add(add(loss, head_cls_loss), head_reg_loss);
    }

    tape.backward(loss);
    losses.total = static_cast<double>(loss.item());
  }

  opt.step(model);
  return losses;
}

// Full inference: proposals, head scoring, per-class NMS, background dropped,
// score floor, at most max_detections results sorted by descending score.
// Switches the model to eval mode.
template <class T>
std::vector<Detection> infer(SmrNet<T>& model, const TensorT<T>& image) {
  check_arg(image.rank() == 4 && image.dim(0) == 1, "infer: expects [1,C,H,W]");
  // Only write the mode when it changes, so frozen models can serve parallel
  // per-image inference.
  if (model.training) model.set_training(false);
  const double img_h = static_cast<double>(image.dim(2));
  const double img_w = static_cast<double>(image.dim(3));

  auto fused = model.fused_features(image);
  auto out = rpn_forward(model.rpn, fused);
  const int A = model.cfg.anchors.per_cell();
  const int h = static_cast<int>(fused.dim(2));
  const int w = static_cast<int>(fused.dim(3));
  const double stride = static_cast<double>(model.cfg.fused_stride());
  const auto anchors = generate_anchors(h, w, stride, model.cfg.anchors.scales,
                                        model.cfg.anchors.ratios);
  auto proposals = select_proposals(out.logits.ptr(), out.deltas.ptr(), anchors, A, h, w,
                                    img_w, img_h, model.cfg.proposals_eval);
  if (proposals.empty()) return {};

  std::vector<std::pair<int64_t, BBox>> rois;
  rois.reserve(proposals.size());
  for (const auto& b : proposals) rois.emplace_back(0, b);
  auto pooled = roi_pool_rows(fused, rois, stride, model.cfg.roi_size);
  auto head_out = detection_head(model.head, pooled);
  auto probs = softmax(head_out.cls_logits);

  const int64_t R = probs.dim(0);
  const int C = model.cfg.num_classes;
  std::vector<Detection> all;
  for (int c = 1; c < C; ++c) {
    std::vector<Detection> cls_dets;
    for (int64_t r = 0; r < R; ++r) {
      std::array<double, 4> d;
      for (int t = 0; t < 4; ++t)
        d[static_cast<size_t>(t)] =
            static_cast<double>(head_out.reg.at({r, static_cast<int64_t>(4 * c + t)}));
      BBox box = clip_box(decode_box(d, proposals[static_cast<size_t>(r)]), img_w, img_h);
      if (!box.valid()) continue;
      cls_dets.push_back(Detection{box, c, static_cast<double>(probs.at({r, c}))});
    }
    auto kept = nms(cls_dets, model.cfg.detection.nms_thresh);
    all.insert(all.end(), kept.begin(), kept.end());
  }

  std::vector<Detection> filtered;
  for (const auto& d : all)
    if (d.score >= model.cfg.detection.score_floor) filtered.push_back(d);
  std::stable_sort(filtered.begin(), filtered.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(filtered.size()) > model.cfg.detection.max_detections)
    filtered.resize(static_cast<size_t>(model.cfg.detection.max_detections));
  return filtered;
}

}  // namespace smrnet
