predicate Sorted(q: seq<int>)
{
  forall i, j :: 0 <= i <= j < |q| ==> q[i] <= q[j]
}

method FindRange(q: seq<int>, key: int) returns (left: nat, right: nat)
  requires Sorted(q)
  ensures left <= right <= |q|
  ensures forall i :: 0 <= i < left ==> q[i] < key
  ensures forall i :: left <= i < right ==> q[i] == key
  ensures forall i :: right <= i < |q| ==> q[i] > key
{
  left := 0;
  while left < |q| && q[left] < key
    invariant left <= |q|
    invariant forall i :: 0 <= i < left ==> q[i] < key
  {
    left := left + 1;
  }
  right := left;
  while right < |q| && q[right] == key
    invariant left <= right <= |q|
    invariant forall i :: left <= i < right ==> q[i] == key
    invariant right < |q| ==> q[right] >= key
  {
    right := right + 1;
  }
}

method Main()
{
  var q := [1,2,2,5,10,10,10,23];
  assert Sorted(q);
  assert 10 in q;
  var i,j := FindRange(q, 10);
  assert 10 in q[i..j];
  assert i == 4 && j == 7 by {
    assert (j == |q| || q[j] > 10);
    assert q[0] <= q[1] <= q[2] <= q[3] < 10;
  }
}
