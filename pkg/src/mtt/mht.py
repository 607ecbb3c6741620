"""Track-oriented hypothesis-tree tracker with windowed commitment.

Every target keeps a tree of association branches over the last few scans;
a global hypothesis picks one leaf per tree without sharing measurements.
Each scan, retained hypotheses are extended through ranked assignment
solutions, the hypothesis list is capped, and decisions older than the
sliding window are committed by re-rooting each tree at the best
hypothesis's ancestor branch.  Estimates read the current filtered belief
of the best hypothesis; track extraction smooths the window backwards.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import assoc, core, jpda, models

logger = logging.getLogger("mtt.mht")

# hypotheses this far (in log weight) below the candidate best are dropped
# even when the cap has room; pure speed measure
_BEAM_DROP = 15.0

# bound on ranked-stream pops per scan while filling the hypothesis cap;
# guards against pathological duplicate runs
_POP_BUDGET = 1000


@dataclass(eq=False)
class _Node:
    time: int
    meas: object  # measurement index, or None for a missed scan
    belief: core.GaussianBelief
    pred: core.GaussianBelief
    parent: object
    hits: tuple = ()
    miss_streak: int = 0
    confirmed: bool = False


@dataclass(eq=False)
class _Dead:
    """Terminal marker for a branch: the track existed along ``node`` and
    its termination (weighted 1 - p_s) was hypothesised at scan ``time``."""
    node: _Node
    time: int


@dataclass(eq=False)
class _Tree:
    label: int
    root: _Node
    committed: tuple = ()


@dataclass(eq=False)
class _Hypothesis:
    logw: float
    leaves: dict  # label -> _Node, _Dead, or None when it never existed


@dataclass
class MhtState:
    trees: dict
    hypotheses: list
    scan: int = 0
    next_label: int = 0
    known: bool = False


def new_state() -> MhtState:
    return MhtState(trees={}, hypotheses=[_Hypothesis(0.0, {})])


def init_known(positions, mdl: core.Models) -> MhtState:
    positions = np.asarray(positions, float).reshape(-1, 2)
    trees, leaves = {}, {}
    for i, p in enumerate(positions):
        belief = jpda.birth_belief(p, mdl.cfg)
        root = _Node(time=0, meas=None, belief=belief, pred=belief, parent=None,
                     confirmed=True)
        trees[i] = _Tree(label=i, root=root)
        leaves[i] = root
    return MhtState(trees=trees, hypotheses=[_Hypothesis(0.0, leaves)],
                    scan=0, next_label=len(trees), known=True)


def _chain(tree: _Tree, leaf: _Node):
    """Window nodes from just below the committed root down to the leaf."""
    nodes = []
    node = leaf
    while node is not tree.root:
        nodes.append(node)
        node = node.parent
    nodes.reverse()
    return nodes


def _lazy_combinations(getters):
    """Ranked sums across one pick per stream; getters return the j-th
    (value, payload) of their stream or None past its end."""
    first = []
    for g in getters:
        e = g(0)
        if e is None:
            return
        first.append(e[0])
    start = (0,) * len(getters)
    heap = [(-sum(first), start)]
    seen = {start}
    while heap:
        neg, idx = heapq.heappop(heap)
        yield -neg, [getters[i](j)[1] for i, j in enumerate(idx)]
        for i, j in enumerate(idx):
            e = getters[i](j + 1)
            if e is not None:
                nxt = idx[:i] + (j + 1,) + idx[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    step = e[0] - getters[i](j)[0]
                    heapq.heappush(heap, (neg - step, nxt))


def mht_step(state: MhtState, frame: core.MeasurementFrame, mdl: core.Models) -> MhtState:
    cfg = mdl.cfg
    z = frame.z
    M = z.shape[0]
    t = frame.time

    # distinct live leaves across all hypotheses
    leaf_list, leaf_index, leaf_label = [], {}, {}
    for h in state.hypotheses:
        for label, leaf in h.leaves.items():
            if isinstance(leaf, _Node) and leaf not in leaf_index:
                leaf_index[leaf] = len(leaf_list)
                leaf_list.append(leaf)
                leaf_label[leaf] = label

    preds = [models.predict(leaf.belief, mdl.motion) for leaf in leaf_list]
    if leaf_list:
        mask = assoc.gate_mask(preds, z, mdl.meas, cfg.gate_threshold)
        prob = assoc.compute_betas(preds, z, mdl.meas, mask=mask)
        beta_all, xi0 = prob.beta, prob.xi0
    else:
        beta_all = np.zeros((0, M + 1))
        xi0 = np.ones(M) if mdl.meas.clutter_density > 0 else np.zeros(M)

    # shared candidate nodes for targets born from this scan's measurements
    new_nodes = {}
    if not state.known and cfg.mht_new_track_weight > 0:
        for m in range(M):
            b = jpda.birth_belief(z[m], mdl.cfg)
            new_nodes[m] = _Node(time=t, meas=m, belief=b, pred=b, parent=None,
                                 hits=(True,), miss_streak=0, confirmed=False)

    child_cache = {}

    def child_of(leaf, m):
        node = child_cache.get((leaf, m))
        if node is None:
            pred = preds[leaf_index[leaf]]
            if m is None:
                belief, hit = pred, False
            else:
                belief, _ = models.kalman_update(pred, z[m], mdl.meas)
                hit = True
            hits = (leaf.hits + (hit,))[-cfg.mht_confirm_n :]
            node = _Node(
                time=t, meas=m, belief=belief, pred=pred, parent=leaf, hits=hits,
                miss_streak=0 if hit else leaf.miss_streak + 1,
                confirmed=leaf.confirmed or state.known
                or sum(hits) >= cfg.mht_confirm_m,
            )
            child_cache[(leaf, m)] = node
        return node

    log_ps = math.log(cfg.p_s)

    # a missed track may instead have terminated: relative to an alive miss
    # the branch trades p_s * (1 - p_d) for 1 - p_s and then stops paying
    flip = None
    if not state.known and cfg.p_s < 1.0 and cfg.p_d < 1.0:
        flip = math.log1p(-cfg.p_s) - log_ps - math.log1p(-cfg.p_d)

    # one shared association decomposition per scan: rows are every live
    # leaf (rows with no positive weight admit no extension and poison
    # their hypotheses) plus the spawn candidates, which belong to every
    # hypothesis; each hypothesis then restricts clusters to its own rows
    rows_beta, row_meta = [], []
    dead = set()
    for i, leaf in enumerate(leaf_list):
        if beta_all[i].max() > 0:
            rows_beta.append(beta_all[i])
            row_meta.append(("leaf", leaf_label[leaf], leaf))
        else:
            dead.add(leaf)
    for m in sorted(new_nodes):
        row = np.zeros(M + 1)
        row[0] = 1.0
        row[1 + m] = cfg.mht_new_track_weight
        rows_beta.append(row)
        row_meta.append(("new", m, new_nodes[m]))

    cluster_infos = []
    if rows_beta:
        gprob = core.AssociationProblem(np.array(rows_beta), xi0)
        for cl in assoc.cluster(gprob):
            cluster_infos.append((cl, [row_meta[r] for r in cl.tracks]))
    sol_cache = {}

    # exact global top-cap extensions: every hypothesis exposes a ranked
    # candidate stream and a heap merges them, so a low-ranked parent can
    # still place a child (e.g. a spawn adoption) among the retained set
    merge = []
    for hi, h in enumerate(state.hypotheses):
        gen = _extend_stream(h, cluster_infos, sol_cache, dead, child_of,
                             log_ps, flip, t)
        head = next(gen, None)
        if head is not None:
            heapq.heappush(merge, (-head[0], hi, head[1], gen))
    candidates = []
    seen = set()
    horizon = t - cfg.mht_window
    pops = 0
    while merge and len(candidates) < cfg.mht_hypothesis_cap and pops < _POP_BUDGET:
        neg, hi, leaves, gen = heapq.heappop(merge)
        pops += 1
        if candidates and -neg < candidates[0][0] - _BEAM_DROP:
            break
        key = _partition_key(leaves, horizon)
        if key not in seen:
            seen.add(key)
            candidates.append((-neg, leaves))
        head = next(gen, None)
        if head is not None:
            heapq.heappush(merge, (-head[0], hi, head[1], gen))

    if not candidates:
        # defensive: force an all-miss extension of the best hypothesis
        h = state.hypotheses[0]
        leaves = {
            label: (child_of(leaf, None) if isinstance(leaf, _Node) else leaf)
            for label, leaf in h.leaves.items()
        }
        candidates = [(h.logw, leaves)]

    best = candidates[0][0]
    hyps = [_Hypothesis(logw - best, leaves) for logw, leaves in candidates]

    out = MhtState(trees=state.trees, hypotheses=hyps, scan=t,
                   next_label=state.next_label, known=state.known)
    _adopt_new_trees(out, new_nodes)
    _cap_leaves(out, cfg)
    nscan_prune(out, mdl)
    return out


def _claim_suffix(node, horizon):
    out = []
    while node is not None and node.time > horizon:
        out.append((node.time, -1 if node.meas is None else node.meas))
        node = node.parent
    return tuple(out)


def _partition_key(leaves, horizon):
    """Window-resolution identity of a hypothesis: the sorted claim suffixes
    of its alive branches.  Two hypotheses with equal keys explain every scan
    since `horizon` identically up to track labels, so their weight ratio is
    frozen (to pre-horizon belief residue) and only the best is worth a slot."""
    parts = [
        _claim_suffix(leaf, horizon)
        for leaf in leaves.values()
        if isinstance(leaf, _Node)
    ]
    parts.sort()
    return tuple(parts)


def _extend_stream(h, cluster_infos, sol_cache, dead, child_of, log_ps, flip, t):
    """Extensions of one hypothesis in nonincreasing weight order."""
    n_alive = 0
    for leaf in h.leaves.values():
        if not isinstance(leaf, _Node):
            continue
        if leaf in dead:
            return
        n_alive += 1
    base_logw = h.logw + n_alive * log_ps
    base_leaves = {
        label: (leaf if isinstance(leaf, _Dead) else None)
        for label, leaf in h.leaves.items()
    }

    getters = []
    for ci, (cl, metas) in enumerate(cluster_infos):
        sel = [
            i for i, (kind, key, _node) in enumerate(metas)
            if kind == "new" or h.leaves.get(key) is _node
        ]
        if sel:
            getters.append(_entry_getter(sol_cache, ci, cl, metas, sel, flip))
    for logw_sum, pick_lists in _lazy_combinations(getters):
        leaves = dict(base_leaves)
        for picks in pick_lists:
            for kind, key, node, m in picks:
                if kind == "leaf":
                    leaves[key] = child_of(node, m)
                elif kind == "dead":
                    leaves[key] = _Dead(node, t)
                elif m is not None:
                    leaves[("new", key)] = node
        yield base_logw + logw_sum, leaves


def _entry_getter(sol_cache, ci, cl, metas, sel, flip):
    """Indexed access to one cluster's ranked events restricted to the
    selected rows, growing the list on demand; the backing list is shared
    by every hypothesis with the same row subset."""
    key = (ci, tuple(sel))
    hit = sol_cache.get(key)
    if hit is None:
        hit = {"entries": [], "k": 0, "done": False}
        sol_cache[key] = hit

    def base(j):
        while j >= len(hit["entries"]) and not hit["done"]:
            k = max(8, 2 * hit["k"], j + 1)
            sub_beta = cl.problem.beta[sel]
            # mirror cluster(): drop measurement columns none of these rows gate
            keep = np.flatnonzero(sub_beta[:, 1:].max(axis=0) > 0)
            cols = np.concatenate(([0], 1 + keep)).astype(int)
            sub = assoc._trusted_problem(sub_beta[:, cols], cl.problem.xi0[keep])
            sols = assoc.kbest(sub, k)
            entries = []
            for a, w in sols:
                picks = []
                for i_local, aj in enumerate(a):
                    kind, label, node = metas[sel[i_local]]
                    m = int(cl.measurements[int(keep[aj - 1])]) if aj > 0 else None
                    picks.append((kind, label, node, m))
                entries.append((math.log(w), picks))
            hit["entries"] = entries
            hit["done"] = len(sols) < k
            hit["k"] = k
        return hit["entries"][j] if j < len(hit["entries"]) else None

    if flip is None:
        return base

    ex = hit.get("ex")
    if ex is None:
        ex = {"list": [], "gen": _flip_variants(base, flip)}
        hit["ex"] = ex

    def get(j):
        while j >= len(ex["list"]):
            nxt = next(ex["gen"], None)
            if nxt is None:
                return None
            ex["list"].append(nxt)
        return ex["list"][j]

    return get


def _flip_variants(base, flip):
    """Expand a ranked event stream with termination variants: any subset of
    the alive-but-missed track rows of an event may die instead, each flip
    adding `flip` (< 0) to the log weight.  Output stays nonincreasing."""
    first = base(0)
    if first is None:
        return
    # node: (negated value, entry index, flip combination over that entry's
    # missed track rows); each combination is reached exactly once via the
    # extend / advance-last scheme, and entry roots chain to the next entry
    heap = [(-first[0], 0, ())]
    while heap:
        neg, i, combo = heapq.heappop(heap)
        val, picks = base(i)
        if combo:
            flippable = [p for p, (kind, _l, _n, m) in enumerate(picks)
                         if kind == "leaf" and m is None]
            chosen = {flippable[c] for c in combo}
            out = [(("dead",) + pick[1:]) if p in chosen else pick
                   for p, pick in enumerate(picks)]
            yield -neg, out
            last = combo[-1]
            if last + 1 < len(flippable):
                heapq.heappush(heap, (neg - flip, i, combo + (last + 1,)))
                heapq.heappush(heap, (neg, i, combo[:-1] + (last + 1,)))
        else:
            yield -neg, picks
            nxt = base(i + 1)
            if nxt is not None:
                heapq.heappush(heap, (-nxt[0], i + 1, ()))
            if any(kind == "leaf" and m is None for kind, _l, _n, m in picks):
                heapq.heappush(heap, (neg - flip, i, (0,)))


def _adopt_new_trees(state: MhtState, new_nodes):
    """Give labels and trees to spawn candidates adopted by any retained
    hypothesis; hypotheses that did not adopt them carry them as null."""
    adopted = []
    for m in new_nodes:
        if any(("new", m) in h.leaves for h in state.hypotheses):
            adopted.append(m)
    for m in adopted:
        label = state.next_label
        state.next_label += 1
        state.trees[label] = _Tree(label=label, root=new_nodes[m])
        for h in state.hypotheses:
            h.leaves[label] = h.leaves.pop(("new", m), None)


def _cap_leaves(state: MhtState, cfg):
    """Per-tree branch cap: rank live leaves by their best containing
    hypothesis and drop hypotheses that use anything beyond the cap."""
    for label in state.trees:
        ranked = []
        for h in state.hypotheses:
            leaf = h.leaves.get(label)
            if isinstance(leaf, _Node) and not any(leaf is s for s in ranked):
                ranked.append(leaf)
        if len(ranked) > cfg.mht_leaf_cap:
            allowed = set(id(s) for s in ranked[: cfg.mht_leaf_cap])
            state.hypotheses = [
                h for h in state.hypotheses
                if not isinstance(h.leaves.get(label), _Node)
                or id(h.leaves[label]) in allowed
            ]


def _is_descendant(node, root):
    while node is not None:
        if node is root:
            return True
        node = node.parent
    return False


def nscan_prune(state: MhtState, mdl: core.Models) -> MhtState:
    """Commit association decisions older than the window: re-root each tree
    along its top-ranked believer's branch and drop hypotheses whose branch
    disagrees with the committed prefix.

    Existence is not an association decision and stays contested for as long
    as the cap retains both sides: hypotheses in which the track never
    existed survive commits.  A tree leaves the state when no retained
    hypothesis references it, or when its leading explanation is a
    termination old enough to fall outside the window."""
    window = mdl.cfg.mht_window
    for label in list(state.trees):
        tree = state.trees[label]
        believer = None
        for h in state.hypotheses:
            if h.leaves.get(label) is not None:
                believer = h.leaves[label]
                break
        if believer is None:
            del state.trees[label]
            for h in state.hypotheses:
                h.leaves.pop(label, None)
            continue
        tip = believer.node if isinstance(believer, _Dead) else believer
        while tip.time - tree.root.time > window:
            node = tip
            while node.parent is not tree.root:
                node = node.parent
            tree.committed = tree.committed + ((node.time, node.meas),)
            tree.root = node
            node.parent = None
            kept = []
            for h in state.hypotheses:
                leaf = h.leaves.get(label)
                if leaf is None:
                    kept.append(h)
                    continue
                if isinstance(leaf, _Dead):
                    leaf = leaf.node
                if _is_descendant(leaf, node):
                    kept.append(h)
            state.hypotheses = kept
        if isinstance(believer, _Dead) and state.scan - believer.time > window:
            # termination committed: hypotheses still extending the track
            # disagree with it and fall; the rest forget the label
            del state.trees[label]
            state.hypotheses = [
                h for h in state.hypotheses
                if not isinstance(h.leaves.get(label), _Node)
            ]
            for h in state.hypotheses:
                h.leaves.pop(label, None)
    return state


# ---------------------------------------------------------------- inspection

def estimates(state: MhtState, mdl: core.Models):
    """(label, position) pairs of the best hypothesis, confirmed branches
    only when the target count is unknown."""
    best = state.hypotheses[0]
    out = []
    for label in state.trees:
        leaf = best.leaves.get(label)
        if not isinstance(leaf, _Node):
            continue
        if not state.known and not leaf.confirmed:
            continue
        out.append((label, leaf.belief.mean[:2].copy()))
    return out


def hypothesis_logweights(state: MhtState):
    return [h.logw for h in state.hypotheses]


def best_leaf_history(state: MhtState, label):
    tree = state.trees[label]
    leaf = state.hypotheses[0].leaves[label]
    return tuple((n.time, n.meas) for n in _chain(tree, leaf))


def leaf_histories(state: MhtState, label):
    tree = state.trees[label]
    distinct = []
    for h in state.hypotheses:
        leaf = h.leaves.get(label)
        if isinstance(leaf, _Node) and not any(leaf is s for s in distinct):
            distinct.append(leaf)
    return [tuple((n.time, n.meas) for n in _chain(tree, leaf)) for leaf in distinct]


def committed_history(state: MhtState, label):
    return state.trees[label].committed


def tree_depth(state: MhtState, label) -> int:
    tree = state.trees[label]
    depth = 0
    for h in state.hypotheses:
        leaf = h.leaves.get(label)
        if isinstance(leaf, _Dead):
            leaf = leaf.node
        if leaf is not None:
            depth = max(depth, leaf.time - tree.root.time)
    return depth


def branch_beliefs(state: MhtState, label, mdl: core.Models):
    """Filtered and predicted belief sequences along the best branch's
    window, ordered oldest first."""
    tree = state.trees[label]
    leaf = state.hypotheses[0].leaves[label]
    nodes = _chain(tree, leaf)
    return [n.belief for n in nodes], [n.pred for n in nodes]


def extract_tracks(state: MhtState, mdl: core.Models):
    """Backward-smoothed window trajectory per tree under the best
    hypothesis."""
    out = []
    for label in state.trees:
        if not isinstance(state.hypotheses[0].leaves.get(label), _Node):
            continue
        filtered, predicted = branch_beliefs(state, label, mdl)
        out.append(models.rts_smooth(filtered, predicted, mdl.motion) if filtered else [])
    return out


def assert_consistent(state: MhtState):
    """Structural invariants: ranked finite weights, leaves tied to live
    trees at the current scan, no measurement claimed twice per hypothesis."""
    assert state.hypotheses, "hypothesis list may never be empty"
    lw = hypothesis_logweights(state)
    assert all(math.isfinite(w) for w in lw)
    assert all(a >= b for a, b in zip(lw, lw[1:])), "hypotheses must stay sorted"
    for h in state.hypotheses:
        claims = set()
        for label, leaf in h.leaves.items():
            if leaf is None:
                continue
            assert label in state.trees, f"leaf for unknown tree {label}"
            tree = state.trees[label]
            if isinstance(leaf, _Dead):
                assert leaf.time <= state.scan
                leaf = leaf.node
                assert leaf.time < state.scan
            else:
                assert leaf.time == state.scan
            assert _is_descendant(leaf, tree.root)
            for node in _chain(tree, leaf):
                if node.meas is not None:
                    key = (node.time, node.meas)
                    assert key not in claims, f"measurement {key} claimed twice"
                    claims.add(key)
