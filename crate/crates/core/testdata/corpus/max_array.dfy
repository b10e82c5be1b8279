method Abs(x: int) returns (y: nat)
  ensures y == x || y == -x
{
  if x < 0 {
    assert -x > 0;
    y := -x;
  } else {
    assert x >= 0;
    y := x;
  }
}

method Lookup(m: map<int, int>, keys: set<int>, k: int) returns (v: int)
  requires keys == m.Keys
  requires k in keys
{
  assert k in keys;
  assert k in m;
  v := m[k];
}
