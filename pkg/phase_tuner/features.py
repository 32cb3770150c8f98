"""
Scoped static features of an IR module and their CSV dump.

Rows are keyed ``Module|Function|Callee|Caller|Loop``.  Every row
carries the module-scope columns; a function row adds the function
(``caller-*``) group, a loop row the loop group and a call-site row the
function and callee/caller groups.  Columns that need more than the
textual model provides (block frequencies, inline-cost fields, SROA
estimates, ...) hold 0 and are flagged as not computed.

Each scope group is computed in a single pass over its instructions.
"""
import os
import statistics

from collections import Counter
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .cost_models import FeatureVector
from .ir_model import RE_OPERAND

SCOPES = ('Module', 'Function', 'CalleeCaller', 'Loop')
KINDS = ('int', 'ratio')
KEY_HEADER = 'Module|Function|Callee|Caller|Loop'
DEFAULT_SCHEMA = os.path.join(os.path.dirname(__file__), 'data', 'pfs_schema.tsv')


@dataclass(frozen=True)
class Column:
    name: str
    scope: str
    kind: str = 'ratio'


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple
    schema_id: str = 'pfs'

    def __post_init__(self):
        names = set()
        for col in self.columns:
            if col.name in names:
                raise ValueError("duplicate feature column {!r}".format(col.name))
            if col.scope not in SCOPES:
                raise ValueError("column {} has unknown scope {!r}".format(col.name, col.scope))
            if col.kind not in KINDS:
                raise ValueError("column {} has unknown kind {!r}".format(col.name, col.kind))
            names.add(col.name)

    @property
    def names(self):
        return tuple(col.name for col in self.columns)

    def __len__(self):
        return len(self.columns)

    def scope_counts(self):
        return Counter(col.scope for col in self.columns)

    @classmethod
    def from_text(cls, text, schema_id='pfs'):
        """
        Parse ``name scope [kind]`` lines (tab or space separated).
        The kind defaults to ``ratio``.
        """
        columns = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith('#'):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ValueError("schema line {}: expected 'name scope [kind]'".format(lineno))
            columns.append(Column(*parts))
        return cls(tuple(columns), schema_id)

    @classmethod
    def load(cls, path=None):
        if path is None:
            path, schema_id = DEFAULT_SCHEMA, 'pfs'
        else:
            schema_id = os.path.splitext(os.path.basename(path))[0]
        with open(path, encoding='utf-8') as f:
            return cls.from_text(f.read(), schema_id)


@dataclass(eq=False)
class FeatureRow:
    scope_key: tuple
    values: np.ndarray
    computed_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.scope_key = tuple(self.scope_key)
        if len(self.scope_key) != 5:
            raise ValueError("a scope key has five components")
        self.values = np.asarray(self.values, dtype=float)
        if self.computed_mask is None:
            self.computed_mask = self.values != 0
        self.computed_mask = np.asarray(self.computed_mask, dtype=bool)

    @property
    def key(self):
        return '|'.join(self.scope_key)

    @property
    def scope(self):
        module, function, callee, caller, loop = self.scope_key
        if loop:
            return 'Loop'
        if callee or caller:
            return 'CalleeCaller'
        if function:
            return 'Function'
        return 'Module'


class _Tally(object):
    """
    Per-block counters gathered in one pass over a function.
    """
    def __init__(self):
        self.instructions = Counter()
        self.loads = Counter()
        self.stores = Counter()
        self.vectors = 0
        self.calls = 0
        self.conditional = 0
        self.calls_with_args = 0
        self.calls_returning_ptr = 0


def _tally(f, visits=None, group=None):
    t = _Tally()
    for b in f.blocks:
        for ins in b.instructions:
            t.instructions[b.label] += 1
            t.loads[b.label] += ins.is_load
            t.stores[b.label] += ins.is_store
            t.vectors += ins.is_vector
            t.calls += ins.is_call
            t.conditional += ins.is_conditional_branch
            if ins.is_call:
                t.calls_with_args += bool(_split_args(_call_args(ins.text)))
                t.calls_returning_ptr += ins.text.split()[1:2] == ['ptr']
        if visits is not None:
            visits[group] += len(b.instructions)
    return t


def _call_args(text):
    """
    Return the argument text of a call instruction.
    """
    start = text.find('(', text.find('@') if '@' in text else 0)
    if start < 0:
        return ''
    depth = 0
    for i in range(start, len(text)):
        if text[i] == '(':
            depth += 1
        elif text[i] == ')':
            depth -= 1
            if depth == 0:
                return text[start + 1:i]
    return text[start + 1:]


def _split_args(args):
    parts, depth, current = [], 0, ''
    for char in args:
        if char in '([{<':
            depth += 1
        elif char in ')]}>':
            depth -= 1
        if char == ',' and depth == 0:
            parts.append(current.strip())
            current = ''
        else:
            current += char
    if current.strip():
        parts.append(current.strip())
    return parts


def _constant_args(args):
    count = 0
    for arg in _split_args(args):
        value = arg.split()[-1] if arg.split() else ''
        if value and not value.startswith(('%', '@')) and RE_OPERAND.fullmatch(value):
            count += 1
    return count


class _ModuleContext(object):
    """
    Call-graph facts shared by the function and call-site groups.
    """
    def __init__(self, model):
        defined = {f.name for f in model.functions}
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(defined)
        self.call_sites = Counter()
        self.calls_in_loop = Counter()
        self.callers = {name: set() for name in defined}
        for f in model.functions:
            for call in f.calls:
                if call.callee in defined:
                    self.graph.add_edge(f.name, call.callee)
                    self.call_sites[call.callee] += 1
                    self.calls_in_loop[call.callee] += call.in_loop
                    self.callers[call.callee].add(f.name)
        self.scc = {}
        condensed = nx.condensation(self.graph)
        for node, data in condensed.nodes(data=True):
            for name in data['members']:
                self.scc[name] = (node, len(data['members']))
        self.height = {}
        for node in reversed(list(nx.topological_sort(condensed))):
            succ = [self.height[s] + 1 for s in condensed.successors(node)]
            self.height[node] = max(succ, default=0)

    def recursive(self, name):
        return self.scc[name][1] > 1 or self.graph.has_edge(name, name)


def _function_group(f, ctx, tally):
    """
    The function-level counters, keyed by the column suffix shared by the
    ``caller-*`` and ``callee-*`` columns.
    """
    blocks = len(f.blocks)
    n = f.instruction_count
    g = f.graph()
    loop_blocks = set()
    for loop in f.loops:
        loop_blocks.update(loop.blocks)
    nloops = len(f.loops)
    successors = {b.label: len(set(g.successors(b.label))) for b in f.blocks}

    values = {
        'SuccessorPerBlock': g.number_of_edges() / blocks if blocks else 0.0,
        'InstructionPerBlock': n / blocks if blocks else 0.0,
        'AvgVecInstr': tally.vectors / n if n else 0.0,
        'Loops': nloops,
        'MaxLoopDepth': max((lp.depth for lp in f.loops), default=0),
        'AvgNestedLoopLevel': (sum(lp.depth for lp in f.loops) / nloops
                               if nloops else 0.0),
        'InstrPerLoop': (sum(sum(tally.instructions[lb] for lb in lp.blocks)
                             for lp in f.loops) / nloops if nloops else 0.0),
        'BlockWithMultipleSuccessorsPerLoop': (
            sum(sum(1 for lb in lp.blocks if successors[lb] > 1)
                for lp in f.loops) / nloops if nloops else 0.0),
        'Calls': tally.calls,
        'Blocks': blocks,
        'basic-block-count': blocks,
        'InitialSize': n,
        'ConditionalBranch': tally.conditional,
        'NumCallsiteInLoop': sum(1 for c in f.calls if c.in_loop),
        'NumOfCallUsesInLoop': ctx.calls_in_loop[f.name],
        'CallUsage': ctx.call_sites[f.name],
        'users': len(ctx.callers[f.name]),
        'IsRecursive': int(ctx.recursive(f.name)),
        'CallerHeight': ctx.height[ctx.scc[f.name][0]],
        'scc-size': ctx.scc[f.name][1],
        'PtrCallee': sum(1 for c in f.calls if c.indirect),
        'IsLinkOnce': int(f.linkage == 'linkonce'),
        'IsLinkOnceODR': int(f.linkage == 'linkonce_odr'),
        'IsLocal': int(f.linkage in ('private', 'internal')),
        'PtrArgs': sum(1 for arg in _split_args(f.params)
                       if arg.startswith('ptr') or arg.split(' ')[0].endswith('*')),
    }
    values['CBwithArg'] = tally.calls_with_args
    values['CallReturnPtr'] = tally.calls_returning_ptr

    conditional = set()
    for b in f.blocks:
        if successors[b.label] > 1:
            conditional.update(g.successors(b.label))
    values['conditionally-executed-blocks'] = len(conditional)
    if blocks:
        sccs = list(nx.strongly_connected_components(g))
        values['average-component-size'] = blocks / len(sccs)
        idom = nx.immediate_dominators(g, f.blocks[0].label)
        depth = {}

        def level(label):
            if label not in depth:
                parent = idom.get(label, label)
                depth[label] = 0 if parent == label else level(parent) + 1
            return depth[label]
        values['MaxDomTreeLevel'] = max((level(label) for label in idom), default=0)
    else:
        values['average-component-size'] = 0.0
        values['MaxDomTreeLevel'] = 0
    return values


def _module_group(model, ctx, visits):
    nfun = len(model.functions)
    loads = stores = calls = instructions = blocks = 0
    edges = critical = loops = 0
    per_function_calls = []
    for f in model.functions:
        fcalls = 0
        for b in f.blocks:
            for ins in b.instructions:
                instructions += 1
                loads += ins.is_load
                stores += ins.is_store
                fcalls += ins.is_call
            visits['Module'] += len(b.instructions)
        calls += fcalls
        per_function_calls.append(fcalls)
        blocks += len(f.blocks)
        g = f.graph()
        edges += g.number_of_edges()
        critical += sum(1 for u, v in g.edges
                        if g.out_degree(u) > 1 and g.in_degree(v) > 1)
        loops += len(f.loops)
    return {
        'average-store-instructions-per-function': stores / nfun if nfun else 0.0,
        'average-load-instructions-per-function': loads / nfun if nfun else 0.0,
        'average-instructions-per-function': instructions / nfun if nfun else 0.0,
        'global-variable-count': len(model.globals),
        'critical-edge-count': critical,
        'total-edge-count': edges,
        'loop-count': loops,
        'median-calls-per-function': (statistics.median_low(per_function_calls)
                                      if nfun else 0),
        'average-calls-per-function': calls / nfun if nfun else 0.0,
        'total-function-calls': calls,
        'total-instruction-count': instructions,
        'average-bb-per-function': blocks / nfun if nfun else 0.0,
        'total-bb-count': blocks,
        'function-count': nfun,
        'node-count': ctx.graph.number_of_nodes(),
        'edge-count': ctx.graph.number_of_edges(),
    }


def _loop_group(f, loop, tally):
    by_header = {lp.header: lp for lp in f.loops}
    children = Counter(lp.parent for lp in f.loops if lp.parent)
    outer = loop
    while outer.parent is not None:
        outer = by_header[outer.parent]

    def height(lp):
        kids = [height(c) + 1 for c in f.loops if c.parent == lp.header]
        return max(kids, default=0)

    def counts(lp):
        return (sum(tally.instructions[b] for b in lp.blocks),
                sum(tally.loads[b] for b in lp.blocks),
                sum(tally.stores[b] for b in lp.blocks))

    insts, loads, stores = counts(loop)
    nest_insts, nest_loads, nest_stores = counts(outer)
    values = {
        'IsFixedTripCount': int(loop.trip_count is not None),
        'MaxLoopHeight': height(loop),
        'IsOuterMostLoop': int(loop.parent is None),
        'IsInnerMostLoop': int(children[loop.header] == 0),
        'TotBlocksPerLoop': len(loop.blocks),
        'AvgNumLoadInstPerLoop': loads / insts if insts else 0.0,
        'TotLoopInstCount': insts,
        'NumStoreInstPerLoop': stores,
        'NumLoadInstPerLoop': loads,
        'AvgNumLoadInstPerLoopNest': nest_loads / nest_insts if nest_insts else 0.0,
        'TotLoopNestInstCount': nest_insts,
        'NumStoreInstPerLoopNest': nest_stores,
        'NumLoadInstPerLoopNest': nest_loads,
        'AvgNumInsts': insts / len(loop.blocks),
        'IndVarSetSize': loop.induction_vars,
    }
    if loop.trip_count is not None:
        values.update({'TripCount': loop.trip_count,
                       'MaxTripCount': loop.trip_count,
                       'StepValueInt': loop.step,
                       'InitialIVValueInt': loop.initial,
                       'FinalIVValueInt': loop.final})
    return values


def _callsite_group(f, call, ctx, groups, model):
    callee = model.function(call.callee)
    loops_with_block = [lp for lp in f.loops if call.block in lp.blocks]
    innermost = max(loops_with_block, key=lambda lp: lp.depth, default=None)
    inner_headers = {lp.parent for lp in f.loops if lp.parent}
    ins = None
    for candidate in f.block(call.block).instructions:
        if candidate.is_call and '@' + call.callee in candidate.text.replace('"', ''):
            ins = candidate
            break
    args = _split_args(_call_args(ins.text)) if ins is not None else []
    constants = _constant_args(_call_args(ins.text)) if ins is not None else 0
    values = {'callee-' + key: value for key, value in groups[callee.name].items()}
    values.update({
        'is-tail': int(call.tail in ('tail', 'musttail')),
        'is-must-tail': int(call.tail == 'musttail'),
        'is-in-inner-loop': int(innermost is not None and
                                innermost.header not in inner_headers),
        'is-indirect': int(call.indirect),
        'loop-level': innermost.depth if innermost is not None else 0,
        'nr-ctant-params': constants,
        'constant-args': constants,
        'call-argument-setup': len(args),
        'is-multiple-blocks': int(len(callee.blocks) > 1),
        'last-call-to-static-bonus': int(callee.linkage in ('private', 'internal') and
                                         ctx.call_sites[callee.name] == 1),
        'num-loops': len(callee.loops),
    })
    return values


def _fill(schema, key, groups):
    """
    Build a row from ``groups``: a list of ``(scope, values)`` pairs.
    """
    values = np.zeros(len(schema))
    mask = np.zeros(len(schema), dtype=bool)
    by_scope = dict(groups)
    for i, col in enumerate(schema.columns):
        computed = by_scope.get(col.scope)
        if computed is not None and col.name in computed:
            value = computed[col.name]
            if value is not None:
                values[i] = value
                mask[i] = True
    return FeatureRow(key, values, mask)


def collect_features(m, schema=None, callsites=False, visits=None):
    """
    Return the feature rows of a parsed module.

    INPUT:

    - ``m`` -- an ``IrModel``

    - ``schema`` -- (default: the 141-column schema) a ``FeatureSchema``

    - ``callsites`` -- (default ``False``) whether to add one row per direct
      call to a function defined in the module

    - ``visits`` -- (optional) a ``Counter`` of instructions visited per
      scope group

    OUTPUT:

    the module row, then for each function either its loop rows or,
    without loops, a function row, followed (with ``callsites``) by the
    call-site rows
    """
    if schema is None:
        schema = FeatureSchema.load()
    if visits is None:
        visits = Counter()
    ctx = _ModuleContext(m)
    module = _module_group(m, ctx, visits)
    name = m.module_name
    rows = [_fill(schema, (name, '', '', '', ''), [('Module', module)])]

    function_groups = {}
    for f in m.functions:
        tally = _tally(f, visits, 'Function')
        function_groups[f.name] = _function_group(f, ctx, tally)
    caller = {fname: {'caller-' + k: v for k, v in values.items()}
              for fname, values in function_groups.items()}

    for f in m.functions:
        if f.loops:
            tally = _tally(f, visits, 'Loop')
            for loop in f.loops:
                rows.append(_fill(schema, (name, f.name, '', '', loop.header),
                                  [('Module', module),
                                   ('Loop', _loop_group(f, loop, tally))]))
        else:
            rows.append(_fill(schema, (name, f.name, '', '', ''),
                              [('Module', module), ('Function', caller[f.name])]))

    if callsites:
        for f in m.functions:
            for call in f.calls:
                if call.indirect or call.callee not in function_groups:
                    continue
                visits['CalleeCaller'] += 1
                site = _callsite_group(f, call, ctx, function_groups, m)
                rows.append(_fill(schema, (name, f.name, call.callee, f.name, ''),
                                  [('Module', module),
                                   ('Function', caller[f.name]),
                                   ('CalleeCaller', site)]))
    return rows


def _format(value, kind):
    if kind == 'int':
        return str(int(round(value)))
    return '{:.6f}'.format(value)


def dump_features_csv(rows, schema=None):
    """
    Return the CSV text of ``rows``: the key header and column names, then
    one line per row.  Integers are printed bare, ratios with 6 decimals.

    EXAMPLES::

        >>> text = dump_features_csv(collect_features(parse_ir('', 'a.ll')))
        >>> text.splitlines()[1][:12]
        'a.ll||||,0.0'
    """
    if schema is None:
        schema = FeatureSchema.load()
    kinds = [col.kind for col in schema.columns]
    lines = [KEY_HEADER + ',' + ','.join(schema.names)]
    for row in rows:
        cells = [_format(v, k) for v, k in zip(row.values, kinds)]
        lines.append(row.key + ',' + ','.join(cells))
    return '\n'.join(lines) + '\n'


def parse_features_csv(text, schema=None):
    """
    Read back the rows of ``dump_features_csv``.
    """
    if schema is None:
        schema = FeatureSchema.load()
    lines = text.splitlines()
    header = lines[0].split(',')
    if header[0] != KEY_HEADER or tuple(header[1:]) != schema.names:
        raise ValueError("the CSV header does not match the feature schema")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        key, _, values = line.partition(',')
        cells = values.split(',')
        if len(cells) != len(schema):
            msg = "line {}: {} values for {} columns"
            raise ValueError(msg.format(lineno, len(cells), len(schema)))
        rows.append(FeatureRow(key.split('|'), [float(c) for c in cells]))
    return rows


def feature_vector(rows, schema=None):
    """
    Return the mean of the rows as one ``FeatureVector``.
    """
    if schema is None:
        schema = FeatureSchema.load()
    return FeatureVector(np.mean([row.values for row in rows], axis=0),
                         schema.schema_id)
