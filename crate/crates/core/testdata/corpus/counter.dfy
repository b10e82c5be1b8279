method CountUp(n: nat) returns (c: nat)
  ensures c == n
{
  c := 0;
  var i := 0;
  while i < n
    invariant 0 <= i <= n
    invariant c == i
  {
    c := c + 1;
    i := i + 1;
    assert c == i;
  }
  assert i == n;
}
