#!/usr/bin/env python3
# Copyright 2026 The vapbc Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Prepends the Apache-2.0 header to source files that lack it."""

import pathlib
import sys

HEADER = """Copyright 2026 The vapbc Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License."""

SLASH = {".cpp", ".hpp", ".h", ".cc"}
HASH = {".py", ".toml", ".cmake", ".txt"}
ROOTS = ["CMakeLists.txt", "pyproject.toml", "include", "src", "tools", "tests", "python"]


def commented(prefix):
    return "\n".join((prefix + " " + line).rstrip() for line in HEADER.splitlines()) + "\n"


def wanted(path):
    if path.suffix in SLASH:
        return True
    return path.suffix in HASH and (path.suffix != ".txt" or path.name == "CMakeLists.txt")


def apply(path):
    text = path.read_text()
    if "Licensed under the Apache License" in text[:2000]:
        return False
    block = commented("//" if path.suffix in SLASH else "#")
    shebang = ""
    if text.startswith("#!"):
        shebang, _, text = text.partition("\n")
        shebang += "\n"
    path.write_text(shebang + block + "\n" + text)
    return True


def main(root):
    root = pathlib.Path(root)
    changed = 0
    for name in ROOTS:
        base = root / name
        files = [base] if base.is_file() else sorted(p for p in base.rglob("*") if p.is_file())
        for p in files:
            if "__pycache__" in p.parts or not wanted(p):
                continue
            changed += apply(p)
    print(f"headers added to {changed} files")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).resolve().parent.parent)
