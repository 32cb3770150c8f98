"""
A structural model of textual IR.

Only a subset of the textual IR grammar is recognised:

- ``define`` opens a function, a line holding ``}`` closes it
- ``label:`` (or ``%label:``) opens a basic block; instructions found
  before the first label go to the implicit entry block
- one instruction per line, with an optional ``%result =`` prefix; the
  cases of a ``switch`` may span several lines
- ``@name = ... global|constant ...`` declares a global variable

Everything else at module level (declarations, attributes, metadata,
types) is skipped, and unknown instructions are kept as generic ones.
"""
import hashlib
import math
import re

from collections import Counter
from dataclasses import dataclass, field

import networkx as nx

TERMINATORS = frozenset(['br', 'ret', 'switch', 'indirectbr', 'invoke',
                         'callbr', 'resume', 'unreachable'])
BRANCHES = frozenset(['br', 'switch', 'indirectbr'])
CALL_PREFIXES = frozenset(['tail', 'musttail', 'notail'])
LINKAGES = frozenset(['private', 'internal', 'available_externally',
                      'linkonce', 'weak', 'common', 'appending',
                      'extern_weak', 'linkonce_odr', 'weak_odr', 'external'])

NAME = r'(?:"[^"]*"|[-\w.$]+)'
RE_MODULE_ID = re.compile(r"^;\s*ModuleID\s*=\s*'([^']*)'")
RE_SOURCE = re.compile(r'^source_filename\s*=\s*"([^"]*)"')
RE_DEFINE = re.compile(r'^define\b(?P<attrs>[^@]*)@(?P<name>' + NAME + r')\s*\((?P<params>.*)')
RE_GLOBAL = re.compile(r'^@(?P<name>' + NAME + r')\s*=\s*(?P<rest>.*)$')
RE_LABEL = re.compile(r'^%?(?P<label>' + NAME + r')\s*:\s*$')
RE_RESULT = re.compile(r'^%(?P<name>' + NAME + r')\s*=\s*(?P<rest>.*)$')
RE_TARGET = re.compile(r'\blabel\s+%(' + NAME + r')')
RE_CALLEE = re.compile(r'@(' + NAME + r')\s*\(')
RE_INDIRECT = re.compile(r'%(' + NAME + r')\s*\(')
RE_VECTOR = re.compile(r'<\s*(?:vscale\s+x\s+)?\d+\s+x\s')
RE_OPERAND = re.compile(r'[%@]' + NAME + r'|(?<![\w.])-?\d+(?:\.\d+)?(?:e[-+]?\d+)?(?![\w.])'
                        r'|\b(?:true|false|null|undef|poison|zeroinitializer)\b')
RE_ALIGN = re.compile(r',\s*align\s+\d+')
RE_UNNAMED_ARG = re.compile(r'%\d+\b')


class IrParseError(ValueError):
    """
    The text does not fit the recognised IR subset.
    """
    def __init__(self, msg, lineno=None):
        if lineno is not None:
            msg = "line {}: {}".format(lineno, msg)
        super(IrParseError, self).__init__(msg)
        self.lineno = lineno


def _unquote(name):
    if name.startswith('"') and name.endswith('"'):
        return name[1:-1]
    return name


def _strip_comment(line):
    """
    Remove a ``;`` comment, ignoring semicolons inside double quotes.
    """
    quoted = False
    for i, char in enumerate(line):
        if char == '"':
            quoted = not quoted
        elif char == ';' and not quoted:
            return line[:i]
    return line


@dataclass
class InstructionRecord:
    opcode: str
    is_load: bool = False
    is_store: bool = False
    is_call: bool = False
    is_branch: bool = False
    is_vector: bool = False
    operands: int = 0
    result: str = None
    text: str = ''

    @property
    def is_terminator(self):
        return self.opcode in TERMINATORS

    @property
    def is_cmp(self):
        return self.opcode in ('icmp', 'fcmp')

    @property
    def is_conditional_branch(self):
        return self.opcode == 'br' and self.text.count('label') > 1

    def targets(self):
        if not self.is_terminator:
            return []
        return [_unquote(t) for t in RE_TARGET.findall(self.text)]


def parse_instruction(text):
    """
    Classify one instruction line (comments already removed).

    EXAMPLES::

        >>> ins = parse_instruction('%5 = load i32, ptr %2, align 4')
        >>> ins.opcode, ins.is_load, ins.result
        ('load', True, '5')
    """
    result = None
    body = text.strip()
    m = RE_RESULT.match(body)
    if m:
        result = _unquote(m.group('name'))
        body = m.group('rest')
    tokens = body.split()
    while tokens and tokens[0] in CALL_PREFIXES:
        tokens = tokens[1:]
    opcode = tokens[0] if tokens else ''
    rest = ' '.join(tokens[1:])
    operands = len(RE_OPERAND.findall(RE_ALIGN.sub('', rest)))
    return InstructionRecord(opcode=opcode,
                             is_load=opcode == 'load',
                             is_store=opcode == 'store',
                             is_call=opcode in ('call', 'invoke', 'callbr'),
                             is_branch=opcode in BRANCHES,
                             is_vector=(opcode.startswith('v') or
                                        RE_VECTOR.search(text) is not None),
                             operands=operands,
                             result=result,
                             text=body)


@dataclass
class Block:
    label: str
    instructions: list = field(default_factory=list)


@dataclass
class CallSite:
    callee: str
    block: str
    in_loop: bool = False
    tail: str = None
    indirect: bool = False


@dataclass(frozen=True)
class GlobalRecord:
    name: str
    is_constant: bool = False
    linkage: str = None


@dataclass(frozen=True)
class LoopModel:
    """
    A natural loop.

    ``parent`` is the header label of the innermost enclosing loop.  The
    induction fields are set only for a recognised canonical integer
    induction variable.
    """
    header: str
    blocks: frozenset
    depth: int = 1
    parent: str = None
    trip_count: int = None
    initial: int = None
    final: int = None
    step: int = None
    induction_vars: int = 0


@dataclass
class FunctionModel:
    name: str
    blocks: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    calls: list = field(default_factory=list)
    linkage: str = None
    params: str = ''
    loops: list = field(default_factory=list)
    irreducible: int = 0

    def block(self, label):
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def instructions(self):
        for b in self.blocks:
            yield from b.instructions

    @property
    def instruction_count(self):
        return sum(len(b.instructions) for b in self.blocks)

    def graph(self):
        g = nx.DiGraph()
        g.add_nodes_from(b.label for b in self.blocks)
        g.add_edges_from(self.edges)
        return g


@dataclass
class IrModel:
    module_name: str = 'module'
    globals: list = field(default_factory=list)
    functions: list = field(default_factory=list)

    @property
    def instruction_count(self):
        return sum(f.instruction_count for f in self.functions)

    @property
    def block_count(self):
        return sum(len(f.blocks) for f in self.functions)

    def function(self, name):
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


def _balanced(text):
    """
    Return ``text`` up to the parenthesis closing an already open one.
    """
    depth = 1
    for i, char in enumerate(text):
        if char == '(':
            depth += 1
        elif char == ')':
            depth -= 1
            if depth == 0:
                return text[:i]
    return text


def _linkage(attrs):
    for word in attrs.split():
        if word in LINKAGES:
            return word
    return None


class _FunctionBuilder(object):
    def __init__(self, name, linkage, params, lineno):
        params = _balanced(params)
        self.function = FunctionModel(name=name, linkage=linkage, params=params)
        self.lineno = lineno
        # unnamed entry block: numbered after the unnamed arguments
        self.entry_label = str(len(RE_UNNAMED_ARG.findall(params)))
        self.current = None
        self.labels = {}
        self.pending = None

    def open_block(self, label, lineno):
        if label in self.labels:
            msg = "duplicate block label {!r} in function {} (first at line {})"
            raise IrParseError(msg.format(label, self.function.name,
                                          self.labels[label]), lineno)
        self.labels[label] = lineno
        self.current = Block(label)
        self.function.blocks.append(self.current)

    def add(self, text, lineno):
        if self.current is None:
            self.open_block(self.entry_label, lineno)
        ins = parse_instruction(text)
        self.current.instructions.append(ins)
        for target in ins.targets():
            self.function.edges.append((self.current.label, target, lineno))
        if ins.is_call:
            m = RE_CALLEE.search(ins.text)
            tail = None
            first = text.strip().split('=', 1)[-1].split()
            if first and first[0] in CALL_PREFIXES:
                tail = first[0]
            if m:
                self.function.calls.append(CallSite(_unquote(m.group(1)),
                                                    self.current.label, tail=tail))
            elif RE_INDIRECT.search(ins.text):
                self.function.calls.append(CallSite('', self.current.label,
                                                    tail=tail, indirect=True))
        return ins

    def finish(self, diagnostics):
        f = self.function
        edges = []
        for source, target, lineno in f.edges:
            if target not in self.labels:
                msg = "branch to undefined label {!r} in function {}"
                raise IrParseError(msg.format(target, f.name), lineno)
            edges.append((source, target))
        f.edges = edges
        local = Counter()
        f.loops = detect_loops(f, local)
        f.irreducible = local['irreducible-regions']
        if diagnostics is not None:
            diagnostics.update(local)
        in_loop = set()
        for loop in f.loops:
            in_loop.update(loop.blocks)
        for call in f.calls:
            call.in_loop = call.block in in_loop
        return f


def parse_ir(text, name=None, diagnostics=None):
    """
    Parse textual IR into an ``IrModel``.

    INPUT:

    - ``text`` -- the IR source

    - ``name`` -- (optional) the module name; by default the ``ModuleID``
      or ``source_filename`` of the text, else ``'module'``

    - ``diagnostics`` -- (optional) a ``Counter`` receiving parser
      diagnostics such as ``irreducible-regions``

    EXAMPLES::

        >>> m = parse_ir('define void @f() {\\n  ret void\\n}\\n')
        >>> len(m.functions), m.instruction_count
        (1, 1)
    """
    model = IrModel()
    found_name = None
    builder = None
    header = None
    switch_text = None
    names = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        if found_name is None:
            m = RE_MODULE_ID.match(raw.strip())
            if m:
                found_name = m.group(1)
        line = _strip_comment(raw).strip()
        if not line:
            continue

        if switch_text is not None:
            switch_text += ' ' + line
            if ']' in line:
                builder.add(switch_text, lineno)
                switch_text = None
            continue

        if header is not None:
            # a define whose opening brace comes on a later line
            if line == '{':
                builder, header = header, None
                continue
            if line.startswith('define') or line == '}':
                raise IrParseError("function {} has no opening brace".format(
                    header.function.name), header.lineno)
            continue

        if builder is None:
            if line.startswith('define'):
                m = RE_DEFINE.match(line)
                if m is None:
                    raise IrParseError("malformed function definition", lineno)
                fname = _unquote(m.group('name'))
                if fname in names:
                    msg = "function {} redefined (first at line {})"
                    raise IrParseError(msg.format(fname, names[fname]), lineno)
                names[fname] = lineno
                new = _FunctionBuilder(fname, _linkage(m.group('attrs')),
                                       m.group('params'), lineno)
                if line.endswith('{'):
                    builder = new
                else:
                    header = new
            elif line.startswith('}'):
                raise IrParseError("unbalanced closing brace", lineno)
            elif line.startswith('@'):
                m = RE_GLOBAL.match(line)
                if m:
                    words = re.findall(r'[\w.]+', m.group('rest').split('(')[0])
                    if 'global' in words or 'constant' in words:
                        model.globals.append(GlobalRecord(
                            _unquote(m.group('name')),
                            'constant' in words and 'global' not in words,
                            _linkage(m.group('rest'))))
            elif found_name is None:
                m = RE_SOURCE.match(line)
                if m:
                    found_name = m.group(1)
            continue

        # inside a function body
        if line.startswith('}'):
            model.functions.append(builder.finish(diagnostics))
            builder = None
            continue
        if line.startswith('define'):
            raise IrParseError("function {} is not closed".format(
                builder.function.name), builder.lineno)
        m = RE_LABEL.match(line)
        if m:
            builder.open_block(_unquote(m.group('label')), lineno)
            continue
        ins_text = line
        if re.match(r'^(%' + NAME + r'\s*=\s*)?switch\b', ins_text) and \
                '[' in ins_text and ']' not in ins_text:
            switch_text = ins_text
            continue
        builder.add(ins_text, lineno)

    if builder is not None or header is not None:
        open_fn = builder or header
        raise IrParseError("function {} is not closed".format(
            open_fn.function.name), open_fn.lineno)
    if switch_text is not None:
        raise IrParseError("unterminated switch")

    model.module_name = name or found_name or 'module'
    return model


def _dominates(idom, a, b):
    while True:
        if a == b:
            return True
        parent = idom.get(b)
        if parent is None or parent == b:
            return False
        b = parent


def detect_loops(f, diagnostics=None):
    """
    Return the natural loops of ``f`` sorted by header label.

    Loops are found from back edges (edges whose target dominates their
    source); back edges sharing a header form one loop.  Cycles left
    after removing every back edge are irreducible regions: they yield no
    loop and are counted under ``irreducible-regions`` in ``diagnostics``.

    EXAMPLES::

        >>> f = FunctionModel('f', [Block('a'), Block('b')], [('a', 'b'), ('b', 'b')])
        >>> [(lp.header, lp.depth) for lp in detect_loops(f)]
        [('b', 1)]
    """
    if not f.blocks:
        return []
    g = f.graph()
    entry = f.blocks[0].label
    reachable = nx.descendants(g, entry) | {entry}
    g = g.subgraph(reachable).copy()
    idom = nx.immediate_dominators(g, entry)

    back_edges = [(u, h) for u, h in g.edges if _dominates(idom, h, u)]
    bodies = {}
    for u, h in back_edges:
        body = bodies.setdefault(h, {h})
        if u != h:
            without_header = g.subgraph(n for n in g if n != h)
            body.add(u)
            body.update(nx.ancestors(without_header, u))

    forward = g.copy()
    forward.remove_edges_from(back_edges)
    irreducible = sum(1 for scc in nx.strongly_connected_components(forward)
                      if len(scc) > 1)
    if diagnostics is not None and irreducible:
        diagnostics['irreducible-regions'] += irreducible

    # outermost loops first, so parents are known before their children
    headers = sorted(bodies, key=lambda h: (-len(bodies[h]), h))
    parents = {}
    depths = {}
    for h in headers:
        enclosing = [p for p in depths
                     if h in bodies[p] and bodies[h] < bodies[p]]
        if enclosing:
            parent = min(enclosing, key=lambda p: len(bodies[p]))
            parents[h] = parent
            depths[h] = depths[parent] + 1
        else:
            parents[h] = None
            depths[h] = 1

    loops = []
    for h in sorted(bodies):
        loops.append(LoopModel(h, frozenset(bodies[h]), depths[h], parents[h],
                               **_induction(f, h, bodies[h])))
    return loops


RE_PHI = re.compile(r'^phi\s+i\d+\s+(.*)$')
RE_INCOMING = re.compile(r'\[\s*([^,\]]+?)\s*,\s*%(' + NAME + r')\s*\]')
RE_STEP = re.compile(r'^add\s+(?:(?:nsw|nuw)\s+)*i\d+\s+(\S+?)\s*,\s*(\S+)$')
RE_ICMP = re.compile(r'^icmp\s+(\w+)\s+i\d+\s+(\S+?)\s*,\s*(\S+)$')
SWAPPED = {'slt': 'sgt', 'ult': 'ugt', 'sle': 'sge', 'ule': 'uge',
           'sgt': 'slt', 'ugt': 'ult', 'sge': 'sle', 'uge': 'ule',
           'ne': 'ne', 'eq': 'eq'}


def _int(token):
    try:
        return int(token)
    except ValueError:
        return None


def _count(init, bound, step, pred):
    """
    Number of iterations of ``for (i = init; i pred bound; i += step)``.
    """
    if step == 0:
        return None
    pred = pred[1:] if pred[0] in 'su' else pred
    if pred == 'lt' and step > 0:
        return max(0, math.ceil((bound - init) / step))
    if pred == 'le' and step > 0:
        return max(0, (bound - init) // step + 1)
    if pred == 'gt' and step < 0:
        return max(0, math.ceil((init - bound) / -step))
    if pred == 'ge' and step < 0:
        return max(0, (init - bound) // -step + 1)
    if pred == 'ne' and (bound - init) % step == 0 and (bound - init) // step >= 0:
        return (bound - init) // step
    return None


def _induction(f, header, body):
    """
    Recognise ``%iv = phi [C0, %out], [%next, %in]`` in the header with
    ``%next = add %iv, STEP`` and ``icmp PRED %iv|%next, BOUND`` inside
    the loop, all constants integers.
    """
    facts = {}
    instructions = [ins for b in f.blocks if b.label in body
                    for ins in b.instructions]
    phis = []
    for ins in f.block(header).instructions:
        m = RE_PHI.match(ins.text)
        if m and ins.result is not None:
            phis.append((ins.result, RE_INCOMING.findall(m.group(1))))
    facts['induction_vars'] = len(phis)

    for iv, incoming in phis:
        init = next_name = None
        for value, source in incoming:
            source = _unquote(source)
            if source in body:
                if value.startswith('%'):
                    next_name = _unquote(value[1:])
            else:
                init = _int(value)
        if init is None or next_name is None:
            continue
        step = None
        for ins in instructions:
            m = RE_STEP.match(ins.text)
            if ins.result == next_name and m:
                a, b = m.groups()
                if a == '%' + iv:
                    step = _int(b)
                elif b == '%' + iv:
                    step = _int(a)
        if step is None:
            continue
        for ins in instructions:
            m = RE_ICMP.match(ins.text)
            if not m:
                continue
            pred, a, b = m.groups()
            if pred not in SWAPPED:
                continue
            if _int(a) is not None:
                pred, a, b = SWAPPED[pred], b, a
            bound = _int(b)
            if bound is None or a not in ('%' + iv, '%' + next_name):
                continue
            if a == '%' + iv:
                trips = _count(init, bound, step, pred)
            else:
                # bottom-tested: the body runs before the first compare
                trips = _count(init + step, bound, step, pred)
                trips = None if trips is None else trips + 1
            if trips is None:
                continue
            facts.update(trip_count=trips, initial=init, final=bound, step=step)
            return facts
    return facts


def ir_fingerprint(text):
    """
    Return a 128-bit hex digest of the IR content, with CRLF line endings
    normalised to LF.

    EXAMPLES::

        >>> ir_fingerprint('ret\\r\\n') == ir_fingerprint(b'ret\\n')
        True
    """
    if isinstance(text, str):
        text = text.encode('utf-8')
    return hashlib.blake2b(text.replace(b'\r\n', b'\n'),
                           digest_size=16).hexdigest()


def file_fingerprint(path):
    with open(path, 'rb') as handle:
        return ir_fingerprint(handle.read())
