#include "attnlens/model.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "attnlens/rng.hpp"

namespace attnlens {

namespace {

Tensor tile_rows(const Tensor& vec, int rows) {
    const int d = static_cast<int>(shape_size(vec.shape));
    Tensor out = Tensor::zeros({rows, d});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = vec.data[static_cast<size_t>(j)];
    return out;
}

} // namespace

int ModelConfig::total_depth() const {
    int n = 0;
    for (int d : stage_depths) n += d;
    return n;
}

int ModelConfig::grid_side(int stage) const { return (image_size / patch_size) >> stage; }

int ModelConfig::tokens(int stage) const {
    const int g = grid_side(stage);
    return variant == Variant::vit ? g * g + 1 : g * g;
}

void ModelConfig::validate() const {
    if (image_size < 1 || patch_size < 1 || channels < 1 || embed_dim < 1 || heads < 1 ||
        num_classes < 1) {
        throw ConfigError("config extents must be positive");
    }
    if (image_size % patch_size != 0) {
        throw ConfigError("image_size must be divisible by patch_size");
    }
    if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (stage_depths.empty()) throw ConfigError("stage_depths must be non-empty");
    for (int d : stage_depths) {
        if (d < 1) throw ConfigError("stage depths must be positive");
    }
    if (variant == Variant::vit) {
        if (stages() != 1) throw ConfigError("vit models have a single stage");
    } else {
        if (window_side < 1) throw ConfigError("window_side must be positive");
        for (int s = 0; s < stages(); ++s) {
            const int tps = grid_side(s);
            if (tps < 1) throw ConfigError("stage " + std::to_string(s) + " has no tokens");
            if (tps % window_side != 0) {
                throw ConfigError("tokens_per_side " + std::to_string(tps) +
                                  " not divisible by window_side at stage " + std::to_string(s));
            }
            // Each boundary halves the grid (2x2 patch merging).
            if (s + 1 < stages() && tps % 2 != 0) {
                throw ConfigError("stage " + std::to_string(s) + " cannot be merged 2x2");
            }
        }
    }
}

ModelConfig ModelConfig::vit_toy() {
    ModelConfig cfg;
    cfg.variant = Variant::vit;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 1;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.num_classes = 4;
    cfg.stage_depths = {4};
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::swin_toy() {
    ModelConfig cfg;
    cfg.variant = Variant::swin;
    cfg.image_size = 8;
    cfg.patch_size = 2;
    cfg.channels = 1;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.num_classes = 4;
    cfg.stage_depths = {2, 2};
    cfg.window_side = 2;
    cfg.validate();
    return cfg;
}

void WeightStore::set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

bool WeightStore::contains(const std::string& name) const { return tensors_.count(name) != 0; }

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw WeightError("missing weight: " + name);
    return it->second;
}

std::map<std::string, std::vector<int>> expected_weight_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::map<std::string, std::vector<int>> shapes;
    const int d = cfg.embed_dim;
    const int patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels;
    shapes["patch_embed.weight"] = {patch_dim, d};
    shapes["patch_embed.bias"] = {d};
    shapes["pos_embed"] = {cfg.tokens(0), d};
    if (cfg.has_cls()) shapes["cls_token"] = {1, d};
    for (int b = 0; b < cfg.total_depth(); ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        shapes[pre + "ln1.gain"] = {d};
        shapes[pre + "ln1.bias"] = {d};
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            shapes[pre + "attn." + w] = {d, d};
        }
        for (const char* w : {"bq", "bk", "bv", "bo"}) {
            shapes[pre + "attn." + w] = {d};
        }
        shapes[pre + "ln2.gain"] = {d};
        shapes[pre + "ln2.bias"] = {d};
        shapes[pre + "mlp.w1"] = {d, cfg.mlp_hidden()};
        shapes[pre + "mlp.b1"] = {cfg.mlp_hidden()};
        shapes[pre + "mlp.w2"] = {cfg.mlp_hidden(), d};
        shapes[pre + "mlp.b2"] = {d};
    }
    for (int s = 0; s + 1 < cfg.stages(); ++s) {
        shapes["merge." + std::to_string(s) + ".weight"] = {4 * d, d};
        shapes["merge." + std::to_string(s) + ".bias"] = {d};
    }
    shapes["head.weight"] = {d, cfg.num_classes};
    shapes["head.bias"] = {cfg.num_classes};
    return shapes;
}

void validate_weights(const ModelConfig& cfg, const WeightStore& weights) {
    const auto expected = expected_weight_shapes(cfg);
    std::vector<std::string> missing;
    for (const auto& [name, shape] : expected) {
        if (!weights.contains(name)) {
            missing.push_back(name);
            continue;
        }
        if (weights.get(name).shape != shape) {
            std::ostringstream msg;
            msg << "weight " << name << " has the wrong shape";
            throw WeightError(msg.str());
        }
    }
    if (!missing.empty()) {
        std::string msg = "missing weights:";
        for (const auto& name : missing) msg += " " + name;
        throw WeightError(msg);
    }
    for (const auto& [name, tensor] : weights.all()) {
        if (!expected.count(name)) throw WeightError("unknown weight: " + name);
    }
}

WeightStore random_weights(const ModelConfig& cfg, unsigned long long seed, Scalar lo, Scalar hi) {
    Rng rng(seed);
    WeightStore store;
    for (const auto& [name, shape] : expected_weight_shapes(cfg)) {
        Tensor t = Tensor::zeros(shape);
        for (Scalar& v : t.data) v = rng.uniform(lo, hi);
        store.set(name, std::move(t));
    }
    return store;
}

std::vector<std::vector<int>> build_window_map(const ModelConfig& cfg, int stage, int shift) {
    if (cfg.variant == Variant::vit) {
        std::vector<int> all(static_cast<size_t>(cfg.tokens(0)));
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return {all};
    }
    const int tps = cfg.grid_side(stage);
    const int ws = cfg.window_side;
    const int per_side = tps / ws;
    std::vector<std::vector<int>> map;
    map.reserve(static_cast<size_t>(per_side) * per_side);
    for (int wr = 0; wr < per_side; ++wr) {
        for (int wc = 0; wc < per_side; ++wc) {
            std::vector<int> slots;
            slots.reserve(static_cast<size_t>(ws) * ws);
            for (int i = 0; i < ws; ++i) {
                for (int j = 0; j < ws; ++j) {
                    const int r = (wr * ws + i + shift) % tps;
                    const int c = (wc * ws + j + shift) % tps;
                    slots.push_back(r * tps + c);
                }
            }
            map.push_back(std::move(slots));
        }
    }
    return map;
}

MergeMap build_merge_map(int boundary, int fine_side) {
    MergeMap mm;
    mm.boundary = boundary;
    const int coarse = fine_side / 2;
    for (int r = 0; r < coarse; ++r) {
        for (int c = 0; c < coarse; ++c) {
            const int r0 = 2 * r, c0 = 2 * c;
            mm.groups.push_back({r0 * fine_side + c0, r0 * fine_side + c0 + 1,
                                 (r0 + 1) * fine_side + c0, (r0 + 1) * fine_side + c0 + 1});
        }
    }
    return mm;
}

Tensor patch_embed(const Tensor& image, const ModelConfig& cfg, const WeightStore& weights) {
    cfg.validate();
    if (image.ndim() != 3 || image.shape[0] != cfg.image_size || image.shape[1] != cfg.image_size ||
        image.shape[2] != cfg.channels) {
        throw ConfigError("image shape does not match the model config");
    }
    const int ps = cfg.patch_size;
    const int grid = cfg.grid_side(0);
    const int patch_dim = ps * ps * cfg.channels;
    Tensor patches = Tensor::zeros({grid * grid, patch_dim});
    for (int pr = 0; pr < grid; ++pr) {
        for (int pc = 0; pc < grid; ++pc) {
            for (int py = 0; py < ps; ++py) {
                for (int px = 0; px < ps; ++px) {
                    for (int ch = 0; ch < cfg.channels; ++ch) {
                        patches.at(pr * grid + pc, (py * ps + px) * cfg.channels + ch) =
                            image.at(pr * ps + py, pc * ps + px, ch);
                    }
                }
            }
        }
    }
    Tensor tokens = add(matmul(patches, weights.get("patch_embed.weight")),
                        tile_rows(weights.get("patch_embed.bias"), grid * grid));
    if (cfg.has_cls()) {
        Tensor with_cls = Tensor::zeros({tokens.rows() + 1, tokens.cols()});
        const Tensor& cls = weights.get("cls_token");
        for (int j = 0; j < tokens.cols(); ++j) with_cls.at(0, j) = cls.at(0, j);
        for (int i = 0; i < tokens.rows(); ++i)
            for (int j = 0; j < tokens.cols(); ++j) with_cls.at(i + 1, j) = tokens.at(i, j);
        tokens = std::move(with_cls);
    }
    return add(tokens, weights.get("pos_embed"));
}

int predict(const Tensor& logits) {
    if (logits.size() < 1) throw ContractError("predict requires at least one logit");
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i) {
        if (logits.data[static_cast<size_t>(i)] > logits.data[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

Model::Model(ModelConfig cfg, WeightStore weights)
    : cfg_(std::move(cfg)), weights_(std::move(weights)) {
    cfg_.validate();
    validate_weights(cfg_, weights_);
}

ForwardTrace Model::forward(const Tensor& image, const ForwardOptions& opts) const {
    ForwardTrace trace;
    trace.config = cfg_;
    trace.graph = std::make_unique<Graph>();
    Graph& g = *trace.graph;
    const int d = cfg_.embed_dim;
    const int heads = cfg_.heads;
    const int dh = cfg_.head_dim();
    const Scalar eps = cfg_.layer_norm_eps;

    std::map<std::string, NodeId> weight_nodes;
    auto win = [&](const std::string& name) {
        auto it = weight_nodes.find(name);
        if (it != weight_nodes.end()) return it->second;
        const NodeId id = g.input(weights_.get(name));
        weight_nodes.emplace(name, id);
        return id;
    };
    auto bias_tile = [&](const std::string& name, int rows) {
        return g.input(tile_rows(weights_.get(name), rows));
    };
    auto linear = [&](NodeId x, const std::string& wname, const std::string& bname, int rows) {
        return g.add(g.matmul(x, win(wname)), bias_tile(bname, rows));
    };

    Rng shuffle_rng(opts.window_shuffle_seed);
    NodeId x = g.input(patch_embed(image, cfg_, weights_));
    int block = 0;
    for (int s = 0; s < cfg_.stages(); ++s) {
        const int n_tok = cfg_.tokens(s);
        for (int b = 0; b < cfg_.stage_depths[s]; ++b, ++block) {
            const std::string pre = "blocks." + std::to_string(block) + ".";
            const int shift =
                (cfg_.variant == Variant::swin && b % 2 == 1) ? cfg_.window_side / 2 : 0;
            auto wmap = build_window_map(cfg_, s, shift);
            if (opts.window_shuffle_seed != 0) shuffle_rng.shuffle(wmap);
            const int nw = static_cast<int>(wmap[0].size());

            const NodeId ln1 = g.layer_norm(x, win(pre + "ln1.gain"), win(pre + "ln1.bias"), eps);
            trace.stats.push_back({block, g.ln_stats(ln1).std});

            AttentionRecord rec;
            rec.block = block;
            rec.stage = s;
            rec.shift = shift;
            rec.window_map = wmap;

            const NodeId wq = win(pre + "attn.wq"), wk = win(pre + "attn.wk"),
                         wv = win(pre + "attn.wv");
            const NodeId bq = bias_tile(pre + "attn.bq", nw), bk = bias_tile(pre + "attn.bk", nw),
                         bv = bias_tile(pre + "attn.bv", nw);
            std::vector<std::vector<NodeId>> block_attn_nodes;
            std::vector<NodeId> window_out;
            for (const auto& slots : wmap) {
                const NodeId xw = g.gather_rows(ln1, slots);
                const NodeId q = g.add(g.matmul(xw, wq), bq);
                const NodeId k = g.add(g.matmul(xw, wk), bk);
                const NodeId v = g.add(g.matmul(xw, wv), bv);
                std::vector<NodeId> head_nodes, head_out;
                rec.attn.emplace_back();
                rec.values.emplace_back();
                rec.outputs.emplace_back();
                for (int hh = 0; hh < heads; ++hh) {
                    const NodeId qh = g.slice_cols(q, hh * dh, dh);
                    const NodeId kh = g.slice_cols(k, hh * dh, dh);
                    const NodeId vh = g.slice_cols(v, hh * dh, dh);
                    const NodeId sc =
                        g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<Scalar>(dh)));
                    const NodeId a = g.softmax_lastdim(sc);
                    g.mark(a);
                    const NodeId o = g.matmul(a, vh);
                    head_nodes.push_back(a);
                    head_out.push_back(o);
                    rec.attn.back().push_back(g.value(a));
                    rec.values.back().push_back(g.value(vh));
                    rec.outputs.back().push_back(g.value(o));
                }
                block_attn_nodes.push_back(std::move(head_nodes));
                window_out.push_back(g.concat_cols(head_out));
            }

            // Windows back to original token order.
            const NodeId cat = g.concat_rows(window_out);
            std::vector<int> inv(static_cast<size_t>(n_tok), -1);
            for (size_t w = 0; w < wmap.size(); ++w)
                for (size_t slot = 0; slot < wmap[w].size(); ++slot)
                    inv[static_cast<size_t>(wmap[w][slot])] =
                        static_cast<int>(w) * nw + static_cast<int>(slot);
            for (int id : inv) {
                if (id < 0) throw ContractError("window map does not cover every token");
            }
            const NodeId attn_tok = g.gather_rows(cat, inv);
            x = g.add(x, linear(attn_tok, pre + "attn.wo", pre + "attn.bo", n_tok));

            const NodeId ln2 = g.layer_norm(x, win(pre + "ln2.gain"), win(pre + "ln2.bias"), eps);
            const NodeId h1 = g.gelu(linear(ln2, pre + "mlp.w1", pre + "mlp.b1", n_tok));
            x = g.add(x, linear(h1, pre + "mlp.w2", pre + "mlp.b2", n_tok));

            trace.records.push_back(std::move(rec));
            trace.attn_nodes.push_back(std::move(block_attn_nodes));
        }
        if (s + 1 < cfg_.stages()) {
            MergeMap mm = build_merge_map(s, cfg_.grid_side(s));
            std::vector<NodeId> merged;
            for (const auto& grp : mm.groups) {
                merged.push_back(g.reshape(g.gather_rows(x, grp), {1, 4 * d}));
            }
            const std::string pre = "merge." + std::to_string(s) + ".";
            x = linear(g.concat_rows(merged), pre + "weight", pre + "bias",
                       static_cast<int>(mm.groups.size()));
            trace.merge_maps.push_back(std::move(mm));
        }
    }

    const NodeId pooled = cfg_.has_cls() ? g.gather_rows(x, {0}) : g.mean_rows(x);
    const NodeId logits = linear(pooled, "head.weight", "head.bias", 1);
    trace.logits_node = logits;
    trace.logits = Tensor({cfg_.num_classes}, g.value(logits).data);
    trace.predicted = predict(trace.logits);
    return trace;
}

void backward_attention_grads(ForwardTrace& trace, int class_index) {
    if (!trace.graph) throw ContractError("trace carries no autodiff state");
    if (class_index < 0 || class_index >= trace.config.num_classes) {
        throw ContractError("class index out of range");
    }
    Graph& g = *trace.graph;
    const NodeId y = g.pick(trace.logits_node, class_index);
    g.backward(y);
    for (size_t r = 0; r < trace.records.size(); ++r) {
        AttentionRecord& rec = trace.records[r];
        rec.grad_attn.assign(rec.window_map.size(), {});
        for (size_t w = 0; w < rec.window_map.size(); ++w) {
            for (NodeId a : trace.attn_nodes[r][w]) {
                rec.grad_attn[w].push_back(g.grad(a));
            }
        }
    }
}

AssembledAttention assemble_full_attention(const AttentionRecord& record, int n_tokens,
                                           bool unit_grads) {
    if (record.attn.empty() || record.attn[0].empty()) {
        throw ContractError("attention record has no heads");
    }
    std::vector<int> seen(static_cast<size_t>(n_tokens), 0);
    for (const auto& slots : record.window_map)
        for (int t : slots) {
            if (t < 0 || t >= n_tokens) throw ContractError("window map token id out of range");
            seen[static_cast<size_t>(t)] += 1;
        }
    for (int c : seen) {
        if (c != 1) throw ContractError("window map must cover each token exactly once");
    }
    if (!unit_grads && !record.has_grads()) {
        throw ContractError("attention gradients have not been filled");
    }
    const int heads = static_cast<int>(record.attn[0].size());
    AssembledAttention out;
    for (int h = 0; h < heads; ++h) {
        out.attn.push_back(Tensor::zeros({n_tokens, n_tokens}));
        out.grad.push_back(Tensor::zeros({n_tokens, n_tokens}));
    }
    for (size_t w = 0; w < record.window_map.size(); ++w) {
        const auto& slots = record.window_map[w];
        const int nw = static_cast<int>(slots.size());
        for (int h = 0; h < heads; ++h) {
            const Tensor& a = record.attn[w][h];
            if (a.rows() != nw || a.cols() != nw) {
                throw ContractError("attention matrix does not match its window");
            }
            const Tensor* ga = unit_grads ? nullptr : &record.grad_attn[w][h];
            for (int i = 0; i < nw; ++i) {
                for (int j = 0; j < nw; ++j) {
                    out.attn[static_cast<size_t>(h)].at(slots[static_cast<size_t>(i)],
                                                        slots[static_cast<size_t>(j)]) = a.at(i, j);
                    out.grad[static_cast<size_t>(h)].at(slots[static_cast<size_t>(i)],
                                                        slots[static_cast<size_t>(j)]) =
                        ga ? ga->at(i, j) : 1.0;
                }
            }
        }
    }
    return out;
}

} // namespace attnlens
